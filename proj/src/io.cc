#include "msloc/io.h"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <variant>

#include "msloc/error.h"

namespace msloc::io {

namespace {

// Tokenizes a text one meaningful line at a time.
class LineReader {
 public:
  LineReader(std::string_view text, const std::string& name) : text_(text), name_(name) {}

  bool next() {
    while (!done_) {
      std::size_t end = text_.find('\n', pos_);
      if (end == std::string_view::npos) {
        end = text_.size();
        done_ = true;
      }
      std::string_view line = text_.substr(pos_, end - pos_);
      pos_ = end + 1;
      ++line_;
      if (const std::size_t hash = line.find('#'); hash != std::string_view::npos)
        line = line.substr(0, hash);
      tokens_.clear();
      std::size_t i = 0;
      while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) tokens_.push_back(line.substr(i, j - i));
        i = j;
      }
      if (!tokens_.empty()) return true;
    }
    return false;
  }

  std::size_t size() const { return tokens_.size(); }
  std::string_view token(std::size_t i) const { return tokens_.at(i); }
  int line() const { return line_; }

  [[noreturn]] void fail(const std::string& message) const { fail_at(line_, message); }
  [[noreturn]] void fail_at(int line, const std::string& message) const {
    throw ParseError(name_, line, message);
  }

  void expect(std::size_t n) const {
    if (tokens_.size() != n)
      fail("expected " + std::to_string(n) + " fields, got " + std::to_string(tokens_.size()));
  }
  void expect_tag(std::string_view tag, std::size_t n) const {
    if (tokens_.empty() || tokens_[0] != tag) fail("expected " + std::string(tag) + " record");
    expect(n);
  }

  double real(std::size_t i) const {
    double v = 0.0;
    const std::string_view t = token(i);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v))
      fail("bad number '" + std::string(t) + "'");
    return v;
  }
  template <typename Int = int>
  Int integer(std::size_t i) const {
    Int v = 0;
    const std::string_view t = token(i);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size())
      fail("bad integer '" + std::string(t) + "'");
    return v;
  }
  Vector2 vec2(std::size_t i) const { return {real(i), real(i + 1)}; }
  Vector3 vec3(std::size_t i) const { return {real(i), real(i + 1), real(i + 2)}; }
  // tx ty tz qx qy qz qw
  Pose pose(std::size_t i) const {
    Eigen::Quaterniond q(real(i + 6), real(i + 3), real(i + 4), real(i + 5));
    const double n = q.norm();
    if (n < 1e-9) fail("zero quaternion");
    if (std::abs(n - 1.0) > 1e-12) q.normalize();
    return Pose(q, vec3(i));
  }

 private:
  std::string_view text_;
  const std::string& name_;
  std::size_t pos_ = 0;
  bool done_ = false;
  int line_ = 0;
  std::vector<std::string_view> tokens_;
};

void put(std::string& out, double v) {
  out += ' ';
  out += format_double(v);
}
void put(std::string& out, const Vector2& v) {
  put(out, v.x());
  put(out, v.y());
}
void put(std::string& out, const Vector3& v) {
  put(out, v.x());
  put(out, v.y());
  put(out, v.z());
}
void put(std::string& out, const Pose& p) {
  put(out, p.translation);
  const auto& q = p.rotation;
  put(out, q.x());
  put(out, q.y());
  put(out, q.z());
  put(out, q.w());
}
void put(std::string& out, long long v) {
  out += ' ';
  out += std::to_string(v);
}

std::unordered_map<int, std::size_t> index_of(std::span<const FrameInfo> frames) {
  std::unordered_map<int, std::size_t> index;
  for (std::size_t k = 0; k < frames.size(); ++k) index.emplace(frames[k].frame_id, k);
  return index;
}

constexpr const char* kMatchKinds[] = {"inlier", "outlier", "contamination"};
constexpr CandidateKind kCandidateKinds[] = {CandidateKind::kClean,        CandidateKind::kFailed,
                                             CandidateKind::kWrongPlace,   CandidateKind::kFrameOutlier,
                                             CandidateKind::kContaminated, CandidateKind::kBiased};

}  // namespace

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kMissingInput, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kInvalidInput, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::kInvalidInput, "write failed: " + path.string());
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// --- Frames and trajectories ----------------------------------------------------

std::vector<FrameInfo> frame_infos(std::span<const QueryFrame> frames) {
  std::vector<FrameInfo> out;
  for (const QueryFrame& f : frames) out.push_back({f.frame_id, f.timestamp});
  return out;
}

std::string write_frames(std::span<const FrameInfo> frames) {
  std::string out = "# frame_id timestamp\n";
  for (const FrameInfo& f : frames) {
    out += std::to_string(f.frame_id);
    put(out, f.timestamp);
    out += '\n';
  }
  return out;
}

std::vector<FrameInfo> read_frames(std::string_view text, const std::string& name) {
  LineReader r(text, name);
  std::vector<FrameInfo> out;
  std::unordered_map<int, int> seen;
  while (r.next()) {
    r.expect(2);
    const FrameInfo f{r.integer(0), r.real(1)};
    if (!seen.emplace(f.frame_id, r.line()).second)
      r.fail("duplicate frame " + std::to_string(f.frame_id));
    out.push_back(f);
  }
  return out;
}

std::string write_trajectory(const Trajectory& trajectory, int round) {
  std::string out;
  if (round > 0) out += "# round " + std::to_string(round) + "\n";
  out += "# timestamp tx ty tz qx qy qz qw\n";
  for (const TrajectoryEntry& e : trajectory) {
    out += format_double(e.timestamp);
    put(out, e.pose);
    out += '\n';
  }
  return out;
}

Trajectory read_trajectory(std::string_view text, const std::string& name,
                           std::span<const FrameInfo> frames) {
  std::map<double, int> by_time;
  for (const FrameInfo& f : frames) by_time.emplace(f.timestamp, f.frame_id);
  LineReader r(text, name);
  Trajectory out;
  while (r.next()) {
    r.expect(8);
    const double ts = r.real(0);
    auto it = by_time.find(ts);
    if (it == by_time.end()) r.fail("timestamp " + format_double(ts) + " is not a known frame");
    out.push_back({it->second, ts, r.pose(1)});
  }
  return out;
}

int read_round(std::string_view text) {
  constexpr std::string_view tag = "# round ";
  if (text.substr(0, tag.size()) != tag) return 0;
  int round = 0;
  const std::string_view rest = text.substr(tag.size());
  std::from_chars(rest.data(), rest.data() + rest.size(), round);
  return round;
}

// --- Camera, odometry, tracks -----------------------------------------------------

std::string write_camera(const CameraIntrinsics& c) {
  std::string out = "CAMERA";
  put(out, c.fx);
  put(out, c.fy);
  put(out, c.cx);
  put(out, c.cy);
  put(out, static_cast<long long>(c.width));
  put(out, static_cast<long long>(c.height));
  return out + "\n";
}

namespace {
CameraIntrinsics camera_from(const LineReader& r) {
  r.expect_tag("CAMERA", 7);
  CameraIntrinsics c{r.real(1), r.real(2), r.real(3), r.real(4), r.integer(5), r.integer(6)};
  try {
    c.validate();
  } catch (const Error& e) {
    r.fail(e.what());
  }
  return c;
}
}  // namespace

CameraIntrinsics read_camera(std::string_view text, const std::string& name) {
  LineReader r(text, name);
  if (!r.next()) r.fail("missing CAMERA record");
  const CameraIntrinsics c = camera_from(r);
  if (r.next()) r.fail("unexpected record after CAMERA");
  return c;
}

std::string write_odometry(std::span<const OdometryEdge> edges) {
  std::string out = "# frame_a frame_b tx ty tz qx qy qz qw\n";
  for (const OdometryEdge& e : edges) {
    out += std::to_string(e.frame_a) + ' ' + std::to_string(e.frame_b);
    put(out, e.z);
    out += '\n';
  }
  return out;
}

std::vector<OdometryEdge> read_odometry(std::string_view text, const std::string& name) {
  LineReader r(text, name);
  std::vector<OdometryEdge> out;
  while (r.next()) {
    r.expect(9);
    out.push_back({r.integer(0), r.integer(1), r.pose(2)});
  }
  return out;
}

std::string write_tracks(std::span<const MatchSet2D2D> tracks) {
  std::string out = "# frame_a frame_b u1 v1 u2 v2\n";
  for (const MatchSet2D2D& t : tracks) {
    const std::string prefix = std::to_string(t.frame_a) + ' ' + std::to_string(t.frame_b);
    for (const Match2D2D& m : t.matches) {
      out += prefix;
      put(out, m.a);
      put(out, m.b);
      out += '\n';
    }
  }
  return out;
}

std::vector<MatchSet2D2D> read_tracks(std::string_view text, const std::string& name) {
  LineReader r(text, name);
  std::vector<MatchSet2D2D> out;
  while (r.next()) {
    r.expect(6);
    const int a = r.integer(0), b = r.integer(1);
    if (out.empty() || out.back().frame_a != a || out.back().frame_b != b)
      out.push_back({a, b, {}});
    out.back().matches.push_back({r.vec2(2), r.vec2(4)});
  }
  return out;
}

// --- Query matches and candidates --------------------------------------------------

std::string write_query_matches(std::span<const QueryFrame> frames) {
  std::string out = "# QM frame_id session_id source u v X Y Z\n";
  for (const QueryFrame& f : frames) {
    for (const Match2D3D& m : f.matches) {
      out += "QM " + std::to_string(f.frame_id) + ' ' + std::to_string(m.session_id) + ' ' +
             std::string(to_string(m.source));
      put(out, m.query_point);
      put(out, m.world_point);
      out += '\n';
    }
  }
  return out;
}

std::vector<QueryFrame> read_query_matches(std::string_view text, const std::string& name,
                                           std::span<const FrameInfo> frames) {
  std::vector<QueryFrame> out;
  for (const FrameInfo& f : frames) out.push_back({f.frame_id, f.timestamp, {}});
  const auto index = index_of(frames);
  LineReader r(text, name);
  while (r.next()) {
    r.expect_tag("QM", 9);
    auto it = index.find(r.integer(1));
    if (it == index.end()) r.fail("unknown frame " + std::string(r.token(1)));
    const auto source = parse_match_source(r.token(3));
    if (!source) r.fail("unknown source '" + std::string(r.token(3)) + "'");
    out[it->second].matches.push_back({r.vec2(4), r.vec3(6), *source, r.integer(2)});
  }
  return out;
}

std::string write_candidates(std::span<const CandidateSet> candidates) {
  std::string out =
      "# CAND frame_id session_id tx ty tz qx qy qz qw n_inliers, then M2D3D u v X Y Z\n";
  for (const CandidateSet& set : candidates) {
    for (const Candidate& c : set.candidates) {
      out += "CAND " + std::to_string(set.frame_id) + ' ' + std::to_string(c.session_id);
      put(out, c.pose);
      put(out, static_cast<long long>(c.inliers.size()));
      out += '\n';
      for (const Match2D3D& m : c.inliers) {
        out += "M2D3D";
        put(out, m.query_point);
        put(out, m.world_point);
        out += '\n';
      }
    }
  }
  return out;
}

std::vector<CandidateSet> read_candidates(std::string_view text, const std::string& name,
                                          std::span<const FrameInfo> frames) {
  std::vector<CandidateSet> out;
  for (const FrameInfo& f : frames) out.push_back({f.frame_id, {}});
  const auto index = index_of(frames);
  LineReader r(text, name);
  while (r.next()) {
    r.expect_tag("CAND", 11);
    auto it = index.find(r.integer(1));
    if (it == index.end()) r.fail("unknown frame " + std::string(r.token(1)));
    Candidate c{r.integer(2), r.pose(3), {}};
    const long long n = r.integer<long long>(10);
    if (n < 0) r.fail("negative inlier count");
    CandidateSet& set = out[it->second];
    if (set.find_session(c.session_id))
      r.fail("second candidate for session " + std::to_string(c.session_id));
    const int cand_line = r.line();
    for (long long i = 0; i < n; ++i) {
      if (!r.next()) r.fail_at(cand_line, "file ends before " + std::to_string(n) + " M2D3D records");
      r.expect_tag("M2D3D", 6);
      c.inliers.push_back({r.vec2(1), r.vec3(3), MatchSource::kSim, c.session_id});
    }
    set.candidates.push_back(std::move(c));
  }
  return out;
}

// --- Session maps -----------------------------------------------------------------

std::string write_map(const SessionMap& map) {
  std::string out = "SESSION " + std::to_string(map.session_id) + "\n";
  const CameraIntrinsics* camera = nullptr;
  for (const MapFrame& f : map.frames) {
    const CameraIntrinsics& c = f.camera;
    if (!camera || camera->fx != c.fx || camera->fy != c.fy || camera->cx != c.cx ||
        camera->cy != c.cy || camera->width != c.width || camera->height != c.height) {
      out += write_camera(c);
      camera = &f.camera;
    }
    out += "FRAME " + std::to_string(f.id);
    put(out, f.timestamp);
    put(out, f.pose);
    out += '\n';
  }
  for (const MapPoint& p : map.points) {
    out += "POINT " + std::to_string(p.id);
    put(out, p.position);
    put(out, static_cast<long long>(p.observations.size()));
    for (const MapObservation& o : p.observations) {
      put(out, static_cast<long long>(o.frame_id));
      put(out, o.pixel);
    }
    out += '\n';
  }
  return out;
}

SessionMap read_map(std::string_view text, const std::string& name) {
  LineReader r(text, name);
  SessionMap map;
  if (!r.next()) r.fail("missing SESSION record");
  r.expect_tag("SESSION", 2);
  map.session_id = r.integer(1);
  std::optional<CameraIntrinsics> camera;
  while (r.next()) {
    const std::string_view tag = r.token(0);
    if (tag == "CAMERA") {
      camera = camera_from(r);
    } else if (tag == "FRAME") {
      if (!camera) r.fail("FRAME before any CAMERA record");
      r.expect(10);
      map.frames.push_back({r.integer(1), r.real(2), r.pose(3), *camera});
    } else if (tag == "POINT") {
      if (r.size() < 6) r.fail("truncated POINT record");
      MapPoint p{r.integer(1), r.vec3(2), {}};
      const int n = r.integer(5);
      if (n < 0) r.fail("negative observation count");
      r.expect(6 + 3 * static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        const std::size_t j = 6 + 3 * static_cast<std::size_t>(i);
        p.observations.push_back({r.integer(j), r.vec2(j + 1), -1});
      }
      map.points.push_back(std::move(p));
    } else {
      r.fail("unknown record '" + std::string(tag) + "'");
    }
  }
  return map;
}

// --- Selection, weights, iteration log ----------------------------------------------

std::string write_selection(const Selection& selection, std::span<const CandidateSet> candidates,
                            std::span<const std::int64_t> frame_scores) {
  if (selection.choice.size() != candidates.size() || frame_scores.size() != candidates.size())
    throw Error(ErrorCode::kInvalidInput, "selection, candidates and scores differ in size");
  std::string out = "# SEL frame_id session_id score; total " + std::to_string(selection.score) +
                    "\n";
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    int session = -1;
    if (selection.choice[k])
      session = candidates[k].candidates.at(static_cast<std::size_t>(*selection.choice[k])).session_id;
    out += "SEL " + std::to_string(candidates[k].frame_id) + ' ' + std::to_string(session) + ' ' +
           std::to_string(frame_scores[k]) + '\n';
  }
  return out;
}

Selection read_selection(std::string_view text, const std::string& name,
                         std::span<const CandidateSet> candidates) {
  Selection s;
  for (const CandidateSet& c : candidates) s.frame_ids.push_back(c.frame_id);
  s.choice.assign(candidates.size(), std::nullopt);
  std::unordered_map<int, std::size_t> index;
  for (std::size_t k = 0; k < candidates.size(); ++k) index.emplace(candidates[k].frame_id, k);
  std::vector<bool> seen(candidates.size(), false);
  LineReader r(text, name);
  while (r.next()) {
    r.expect_tag("SEL", 4);
    auto it = index.find(r.integer(1));
    if (it == index.end()) r.fail("unknown frame " + std::string(r.token(1)));
    if (seen[it->second]) r.fail("frame selected twice");
    seen[it->second] = true;
    const int session = r.integer(2);
    s.score += r.integer<std::int64_t>(3);
    if (session < 0) continue;
    const auto& cs = candidates[it->second].candidates;
    std::size_t i = 0;
    while (i < cs.size() && cs[i].session_id != session) ++i;
    if (i == cs.size()) r.fail("no candidate of session " + std::to_string(session));
    s.choice[it->second] = static_cast<int>(i);
  }
  return s;
}

std::string write_weights(std::span<const int> frame_ids, std::span<const double> weights) {
  if (frame_ids.size() != weights.size())
    throw Error(ErrorCode::kInvalidInput, "one weight per frame required");
  std::string out = "# W frame_id w\n";
  for (std::size_t k = 0; k < weights.size(); ++k) {
    out += "W " + std::to_string(frame_ids[k]);
    put(out, weights[k]);
    out += '\n';
  }
  return out;
}

std::vector<FrameWeight> read_weights(std::string_view text, const std::string& name) {
  LineReader r(text, name);
  std::vector<FrameWeight> out;
  while (r.next()) {
    r.expect_tag("W", 3);
    out.push_back({r.integer(1), r.real(2)});
  }
  return out;
}

std::string write_iteration_log(std::span<const IterationRecord> log) {
  std::string out = "iter,step,objective,max_dw,runtime_ms\n";
  for (const IterationRecord& rec : log)
    out += std::to_string(rec.iteration) + ',' + rec.step + ',' + format_double(rec.objective) +
           ',' + format_double(rec.max_weight_change) + ',' + format_double(rec.runtime_ms) + '\n';
  return out;
}

std::vector<IterationRecord> read_iteration_log(std::string_view text, const std::string& name) {
  std::string spaced(text);
  for (char& c : spaced)
    if (c == ',') c = ' ';
  LineReader r(spaced, name);
  if (!r.next() || r.size() != 5 || r.token(0) != "iter") r.fail("missing CSV header");
  std::vector<IterationRecord> out;
  while (r.next()) {
    r.expect(5);
    out.push_back({r.integer(0), std::string(r.token(1)), r.real(2), r.real(3), r.real(4)});
  }
  return out;
}

// --- Labels --------------------------------------------------------------------------

std::string write_labels(const GroundTruth& truth, std::span<const QueryFrame> frames,
                         std::span<const MatchSet2D2D> tracks) {
  std::string out = "# CLABEL frame session kind | MLABEL frame index kind | TLABEL a b index\n";
  for (const CandidateLabel& c : truth.candidates)
    out += "CLABEL " + std::to_string(c.frame_id) + ' ' + std::to_string(c.session_id) + ' ' +
           to_string(c.kind) + '\n';
  for (std::size_t k = 0; k < frames.size() && k < truth.matches.size(); ++k)
    for (std::size_t i = 0; i < truth.matches[k].size(); ++i)
      if (truth.matches[k][i] != MatchKind::kInlier)
        out += "MLABEL " + std::to_string(frames[k].frame_id) + ' ' + std::to_string(i) + ' ' +
               kMatchKinds[static_cast<int>(truth.matches[k][i])] + '\n';
  for (std::size_t t = 0; t < tracks.size() && t < truth.track_outliers.size(); ++t)
    for (std::size_t i = 0; i < truth.track_outliers[t].size(); ++i)
      if (truth.track_outliers[t][i])
        out += "TLABEL " + std::to_string(tracks[t].frame_a) + ' ' +
               std::to_string(tracks[t].frame_b) + ' ' + std::to_string(i) + '\n';
  return out;
}

GroundTruth read_labels(std::string_view text, const std::string& name,
                        std::span<const QueryFrame> frames, std::span<const MatchSet2D2D> tracks) {
  GroundTruth truth;
  std::unordered_map<int, std::size_t> frame_index;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    frame_index.emplace(frames[k].frame_id, k);
    truth.matches.emplace_back(frames[k].matches.size(), MatchKind::kInlier);
  }
  std::map<std::pair<int, int>, std::size_t> track_index;
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    track_index.emplace(std::pair{tracks[t].frame_a, tracks[t].frame_b}, t);
    truth.track_outliers.emplace_back(tracks[t].matches.size(), false);
  }
  LineReader r(text, name);
  while (r.next()) {
    const std::string_view tag = r.token(0);
    if (tag == "CLABEL") {
      r.expect(4);
      const CandidateKind* kind = nullptr;
      for (const CandidateKind& k : kCandidateKinds)
        if (r.token(3) == to_string(k)) kind = &k;
      if (!kind) r.fail("unknown candidate kind '" + std::string(r.token(3)) + "'");
      truth.candidates.push_back({r.integer(1), r.integer(2), *kind});
    } else if (tag == "MLABEL") {
      r.expect(4);
      auto it = frame_index.find(r.integer(1));
      if (it == frame_index.end()) r.fail("unknown frame " + std::string(r.token(1)));
      const auto i = r.integer<std::size_t>(2);
      if (i >= truth.matches[it->second].size()) r.fail("match index out of range");
      int kind = 0;
      while (kind < 3 && r.token(3) != kMatchKinds[kind]) ++kind;
      if (kind == 3) r.fail("unknown match kind '" + std::string(r.token(3)) + "'");
      truth.matches[it->second][i] = static_cast<MatchKind>(kind);
    } else if (tag == "TLABEL") {
      r.expect(4);
      auto it = track_index.find({r.integer(1), r.integer(2)});
      if (it == track_index.end()) r.fail("unknown track pair");
      const auto i = r.integer<std::size_t>(3);
      if (i >= truth.track_outliers[it->second].size()) r.fail("track index out of range");
      truth.track_outliers[it->second][i] = true;
    } else {
      r.fail("unknown record '" + std::string(tag) + "'");
    }
  }
  return truth;
}

// --- Configuration --------------------------------------------------------------------

namespace {

using Slot = std::variant<double*, int*, std::uint64_t*, RefineVariant*>;

std::vector<std::pair<std::string, Slot>> slots(Config& c) {
  ScenarioConfig& s = c.scenario;
  PipelineOptions& p = c.pipeline;
  return {
      {"seed", &c.seed},
      {"scenario.n_frames", &s.n_frames},
      {"scenario.n_sessions", &s.n_sessions},
      {"scenario.camera_fx", &s.camera.fx},
      {"scenario.camera_fy", &s.camera.fy},
      {"scenario.camera_cx", &s.camera.cx},
      {"scenario.camera_cy", &s.camera.cy},
      {"scenario.image_width", &s.camera.width},
      {"scenario.image_height", &s.camera.height},
      {"scenario.step_length", &s.step_length},
      {"scenario.stop_rate", &s.stop_rate},
      {"scenario.stop_length", &s.stop_length},
      {"scenario.heading_rate_sigma", &s.heading_rate_sigma},
      {"scenario.max_heading_rate", &s.max_heading_rate},
      {"scenario.session_lateral_offset", &s.session_lateral_offset},
      {"scenario.camera_height", &s.camera_height},
      {"scenario.points_per_metre", &s.points_per_metre},
      {"scenario.facade_min_offset", &s.facade_min_offset},
      {"scenario.facade_max_offset", &s.facade_max_offset},
      {"scenario.facade_height", &s.facade_height},
      {"scenario.ground_fraction", &s.ground_fraction},
      {"scenario.max_depth", &s.max_depth},
      {"scenario.pixel_noise", &s.pixel_noise},
      {"scenario.map_pixel_noise", &s.map_pixel_noise},
      {"scenario.map_mismatch_rate", &s.map_mismatch_rate},
      {"scenario.matches_per_source", &s.matches_per_source},
      {"scenario.slam_point_noise", &s.slam_point_noise},
      {"scenario.dense_point_noise", &s.dense_point_noise},
      {"scenario.outlier_rate_2d3d", &s.outlier_rate_2d3d},
      {"scenario.outlier_rate_2d2d", &s.outlier_rate_2d2d},
      {"scenario.track_matches", &s.track_matches},
      {"scenario.session_failure_rate", &s.session_failure_rate},
      {"scenario.candidate_outlier_rate", &s.candidate_outlier_rate},
      {"scenario.gross_outlier_rate", &s.gross_outlier_rate},
      {"scenario.gross_outlier_offset", &s.gross_outlier_offset},
      {"scenario.contamination_rate", &s.contamination_rate},
      {"scenario.contamination_min_offset", &s.contamination_min_offset},
      {"scenario.contamination_max_offset", &s.contamination_max_offset},
      {"scenario.incompatible_bias", &s.incompatible_bias},
      {"scenario.incompatible_match_factor", &s.incompatible_match_factor},
      {"scenario.odometry_drift", &s.odometry_drift},
      {"scenario.odometry_rotation_drift", &s.odometry_rotation_drift},
      {"localization.threshold_px", &p.localization.ransac.threshold_px},
      {"localization.max_iterations", &p.localization.ransac.max_iterations},
      {"localization.confidence", &p.localization.ransac.confidence},
      {"localization.refine_iterations", &p.localization.ransac.refine_iterations},
      {"localization.dedupe_radius_px", &p.localization.dedupe_radius_px},
      {"localization.min_inliers", &p.localization.min_inliers},
      {"consensus.sampson_threshold", &p.consensus.sampson_threshold},
      {"consensus.min_baseline", &p.consensus.min_baseline},
      {"refine.variant", &c.variant},
      {"refine.lambda1", &p.refine.lambda1},
      {"refine.lambda2", &p.refine.lambda2},
      {"refine.u", &p.refine.u},
      {"refine.rotation_weight", &p.refine.rotation_weight},
      {"refine.huber_reprojection_px", &p.refine.huber_reprojection_px},
      {"refine.huber_sampson_sq_px", &p.refine.huber_sampson_sq_px},
      {"refine.weight_tolerance", &p.refine.weight_tolerance},
      {"refine.max_em_iterations", &p.refine.max_em_iterations},
      {"refine.max_solver_iterations", &p.refine.max_solver_iterations},
      {"refine.solver_tolerance", &p.refine.solver_tolerance},
      {"refine.seed_min_matches", &p.refine.seed_min_matches},
      {"refine.min_sampson_baseline", &p.refine.min_sampson_baseline},
      {"refine.skip_stride", &p.skip_stride},
      {"polish.threshold_px", &p.polish.threshold_px},
      {"polish.min_inliers", &p.polish.min_inliers},
      {"polish.ransac_threshold_px", &p.polish.ransac.threshold_px},
      {"polish.ransac_max_iterations", &p.polish.ransac.max_iterations},
      {"polish.ransac_confidence", &p.polish.ransac.confidence},
      {"polish.refine_iterations", &p.polish.ransac.refine_iterations},
  };
}

template <typename T>
bool parse_number(std::string_view s, T* out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), *out);
  return ec == std::errc() && p == s.data() + s.size();
}

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorCode::kInvalidConfig, message);
}

}  // namespace

Config Config::resolved() const {
  Config c = *this;
  c.scenario.seed = seed;
  c.pipeline.localization.ransac.seed = seed;
  c.pipeline.polish.ransac.seed = seed;
  c.pipeline.refine.apply(variant);
  return c;
}

void Config::validate() const {
  scenario.validate();
  pipeline.refine.validate();
  for (const RansacOptions* r : {&pipeline.localization.ransac, &pipeline.polish.ransac}) {
    require(r->threshold_px > 0.0, "RANSAC threshold must be positive");
    require(r->max_iterations >= 1, "RANSAC needs at least one iteration");
    require(r->confidence > 0.0 && r->confidence < 1.0, "RANSAC confidence must lie in (0, 1)");
    require(r->refine_iterations >= 0, "negative refine_iterations");
  }
  require(pipeline.localization.dedupe_radius_px >= 0.0, "negative dedupe radius");
  require(pipeline.localization.min_inliers >= 4, "localization.min_inliers must be >= 4");
  require(pipeline.polish.min_inliers >= 4, "polish.min_inliers must be >= 4");
  require(pipeline.polish.threshold_px >= 0.0, "negative polish threshold");
  require(pipeline.consensus.sampson_threshold > 0.0, "Sampson threshold must be positive");
  require(pipeline.consensus.min_baseline >= 0.0, "negative min_baseline");
  require(pipeline.skip_stride >= 0, "negative skip_stride");
}

void set_config_value(Config& config, std::string_view key, std::string_view value) {
  const std::string v = trim(value);
  for (auto& [name, slot] : slots(config)) {
    if (name != key) continue;
    const bool ok = std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, RefineVariant>) {
            const auto parsed = parse_refine_variant(v);
            if (parsed) *p = *parsed;
            return parsed.has_value();
          } else {
            return parse_number(v, p) && (!std::is_floating_point_v<T> || std::isfinite(*p));
          }
        },
        slot);
    require(ok, "bad value '" + v + "' for " + std::string(key));
    return;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown key '" + std::string(key) + "'");
}

std::string write_config(const Config& config) {
  Config copy = config;
  std::string out;
  for (auto& [name, slot] : slots(copy)) {
    out += name + " = ";
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, RefineVariant>)
            out += to_string(*p);
          else if constexpr (std::is_same_v<T, double>)
            out += format_double(*p);
          else
            out += std::to_string(*p);
        },
        slot);
    out += '\n';
  }
  return out;
}

Config read_config(std::string_view text, const std::string& name, Config base) {
  std::size_t line_start = 0;
  int line_no = 0;
  while (line_start <= text.size()) {
    std::size_t end = text.find('\n', line_start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(line_start, end - line_start);
    line_start = end + 1;
    ++line_no;
    if (const std::size_t hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorCode::kInvalidConfig,
                  name + ":" + std::to_string(line_no) + ": expected key = value");
    try {
      set_config_value(base, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const Error& e) {
      std::string message = e.what();
      const std::string prefix = std::string(to_string(ErrorCode::kInvalidConfig)) + ": ";
      if (message.starts_with(prefix)) message.erase(0, prefix.size());
      throw Error(ErrorCode::kInvalidConfig, name + ":" + std::to_string(line_no) + ": " + message);
    }
  }
  return base;
}

std::vector<std::string> config_keys() {
  Config c;
  std::vector<std::string> out;
  for (const auto& [name, slot] : slots(c)) out.push_back(name);
  return out;
}

}  // namespace msloc::io
