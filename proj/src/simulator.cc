#include "msloc/simulator.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <unordered_map>

#include "msloc/error.h"
#include "msloc/random.h"

namespace msloc {

namespace {

// Stream tags for derive_seed; each concern draws from its own stream so
// changing one rate does not reshuffle unrelated randomness.
enum Stream : std::uint64_t {
  kRoad = 1,
  kStructure,
  kDatabase,
  kQueryPixels,
  kSessionMatches,
  kSourceOffset,
  kTracks,
  kOdometry,
  kStops,
  kFrameEvents,
};

constexpr MatchSource kSources[] = {MatchSource::kSfm, MatchSource::kSlam,
                                    MatchSource::kDense};
// Displacement of a tracking mismatch from the true correspondence, px.
constexpr double kMinMismatchPx = 5.0;
constexpr double kMaxMismatchPx = 50.0;
// Map points farther than this from their world point make their matches
// outliers even though the association is right.
constexpr double kMapOutlierMetres = 0.25;

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kInvalidConfig, what);
}

bool is_rate(double r) { return r >= 0.0 && r <= 1.0; }

// Road centreline sampled every metre of arc length.
struct Road {
  std::vector<Eigen::Vector2d> points;
  std::vector<double> headings;

  double length() const { return static_cast<double>(points.size() - 1); }

  void at(double s, Eigen::Vector2d* p, double* heading) const {
    s = std::clamp(s, 0.0, length());
    const auto i = std::min(static_cast<std::size_t>(s), points.size() - 2);
    const double f = s - static_cast<double>(i);
    *p = (1.0 - f) * points[i] + f * points[i + 1];
    *heading = (1.0 - f) * headings[i] + f * headings[i + 1];
  }
};

Road make_road(const ScenarioConfig& c, double length) {
  Pcg32 rng(derive_seed(c.seed, kRoad));
  Road road;
  const auto n = static_cast<std::size_t>(std::ceil(length)) + 2;
  road.points.reserve(n);
  road.headings.reserve(n);
  Eigen::Vector2d p = Eigen::Vector2d::Zero();
  double h = 0.0, rate = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    road.points.push_back(p);
    road.headings.push_back(h);
    rate = std::clamp(rate + rng.normal(0.0, c.heading_rate_sigma), -c.max_heading_rate,
                      c.max_heading_rate);
    h += rate;
    p += Eigen::Vector2d(std::cos(h), std::sin(h));
  }
  return road;
}

// Camera on the road at arc length s, `lateral` metres to the right, looking
// along the road. Camera axes: x right, y down, z forward; world z is up.
Pose road_pose(const Road& road, double s, double lateral, double height) {
  Eigen::Vector2d p;
  double h = 0.0;
  road.at(s, &p, &h);
  const Vector3 forward(std::cos(h), std::sin(h), 0.0);
  const Vector3 right(std::sin(h), -std::cos(h), 0.0);
  const Vector3 down(0.0, 0.0, -1.0);
  Matrix3 R;
  R.col(0) = right;
  R.col(1) = down;
  R.col(2) = forward;
  const Vector3 centre(p.x() + lateral * right.x(), p.y() + lateral * right.y(), height);
  return Pose(Eigen::Quaterniond(R), centre);
}

struct World {
  std::vector<Vector3> points;
  std::vector<double> arc;  // arc length of each point, non-decreasing
};

World make_world(const ScenarioConfig& c, const Road& road) {
  Pcg32 rng(derive_seed(c.seed, kStructure));
  World w;
  for (int m = 0; m < static_cast<int>(road.length()); ++m) {
    double count = c.points_per_metre;
    int n = static_cast<int>(count);
    if (rng.bernoulli(count - n)) ++n;
    std::vector<double> arcs(n);
    for (double& s : arcs) s = m + rng.uniform();
    std::sort(arcs.begin(), arcs.end());
    for (double s : arcs) {
      Eigen::Vector2d p;
      double h = 0.0;
      road.at(s, &p, &h);
      const Eigen::Vector2d right(std::sin(h), -std::cos(h));
      double lateral = 0.0, z = 0.0;
      if (rng.bernoulli(c.ground_fraction)) {
        lateral = rng.uniform(-c.facade_min_offset, c.facade_min_offset);
      } else {
        lateral = rng.uniform(c.facade_min_offset, c.facade_max_offset);
        if (rng.bernoulli(0.5)) lateral = -lateral;
        z = rng.uniform(0.0, c.facade_height);
      }
      const Eigen::Vector2d q = p + lateral * right;
      w.points.emplace_back(q.x(), q.y(), z);
      w.arc.push_back(s);
    }
  }
  return w;
}

struct Visible {
  int id;
  Vector2 pixel;  // noiseless
};

// World points in front of the camera at arc length s, within max_depth and
// inside the image.
std::vector<Visible> visible_points(const World& w, const Pose& pose, double s,
                                    const ScenarioConfig& c) {
  std::vector<Visible> out;
  const double span = c.max_depth + c.facade_max_offset + 2.0;
  auto lo = std::lower_bound(w.arc.begin(), w.arc.end(), s - span);
  auto hi = std::upper_bound(w.arc.begin(), w.arc.end(), s + span);
  for (auto it = lo; it != hi; ++it) {
    const auto id = static_cast<int>(it - w.arc.begin());
    const Vector3 pc = pose.transform_inverse(w.points[id]);
    if (pc.z() < 1.0 || pc.z() > c.max_depth) continue;
    const Vector2 px(c.camera.fx * pc.x() / pc.z() + c.camera.cx,
                     c.camera.fy * pc.y() / pc.z() + c.camera.cy);
    if (!c.camera.contains(px, 1.0)) continue;
    out.push_back({id, px});
  }
  return out;
}

Vector2 noisy(const Vector2& px, double sigma, Pcg32& rng) {
  if (sigma <= 0.0) return px;
  return px + Vector2(rng.normal(0.0, sigma), rng.normal(0.0, sigma));
}

Vector2 random_pixel(const CameraIntrinsics& camera, Pcg32& rng) {
  return {rng.uniform(0.0, camera.width), rng.uniform(0.0, camera.height)};
}

Vector3 random_unit(Pcg32& rng) {
  Vector3 v;
  do {
    v = Vector3(rng.normal(), rng.normal(), rng.normal());
  } while (v.norm() < 1e-9);
  return v.normalized();
}

Vector3 random_horizontal(Pcg32& rng) {
  const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return {std::cos(a), std::sin(a), 0.0};
}

// First `n` elements of a random permutation of [0, size).
std::vector<std::size_t> sample_indices(std::size_t size, std::size_t n, Pcg32& rng) {
  std::vector<std::size_t> idx(size);
  for (std::size_t i = 0; i < size; ++i) idx[i] = i;
  n = std::min(n, size);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.below(static_cast<std::uint32_t>(size - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  return idx;
}

struct MapEntry {
  Vector3 position;
  bool accurate;  // within kMapOutlierMetres of the world point
};

struct BuiltSession {
  SessionMap map;
  std::unordered_map<int, MapEntry> entries;  // world point id -> map point
};

BuiltSession build_session(const ScenarioConfig& c, const Road& road, const World& w,
                           int session) {
  Pcg32 rng(derive_seed(c.seed, kDatabase, static_cast<std::uint64_t>(session)));
  const double lateral =
      c.session_lateral_offset * (session - 0.5 * (c.n_sessions - 1));
  std::vector<DatabaseView> views;
  std::vector<std::vector<int>> view_ids;
  const int n_views = static_cast<int>(road.length()) - 1;
  for (int j = 0; j < n_views; ++j) {
    DatabaseView view;
    view.frame.id = j;
    view.frame.timestamp = 0.1 * j;
    view.frame.pose = road_pose(road, j, lateral, c.camera_height);
    view.frame.camera = c.camera;
    std::vector<int> ids;
    for (const Visible& v : visible_points(w, view.frame.pose, j, c)) {
      view.keypoints.push_back(noisy(v.pixel, c.map_pixel_noise, rng));
      ids.push_back(v.id);
    }
    views.push_back(std::move(view));
    view_ids.push_back(std::move(ids));
  }

  std::vector<IndexedMatches> matches;
  for (int j = 0; j + 1 < n_views; ++j) {
    std::unordered_map<int, int> in_b;
    for (std::size_t i = 0; i < view_ids[j + 1].size(); ++i)
      in_b[view_ids[j + 1][i]] = static_cast<int>(i);
    IndexedMatches m{j, j + 1, {}};
    const auto nb = static_cast<std::uint32_t>(view_ids[j + 1].size());
    for (std::size_t i = 0; i < view_ids[j].size(); ++i) {
      auto it = in_b.find(view_ids[j][i]);
      if (it == in_b.end()) continue;
      int kb = it->second;
      if (nb > 0 && rng.bernoulli(c.map_mismatch_rate)) kb = static_cast<int>(rng.below(nb));
      m.pairs.emplace_back(static_cast<int>(i), kb);
    }
    matches.push_back(std::move(m));
  }

  BuiltSession out;
  out.map = build_session_map(session, views, matches);
  for (const MapPoint& p : out.map.points) {
    for (const MapObservation& o : p.observations) {
      if (o.keypoint < 0) continue;
      const int wid = view_ids[o.frame_id][o.keypoint];
      const bool accurate = (p.position - w.points[wid]).norm() <= kMapOutlierMetres;
      out.entries.try_emplace(wid, MapEntry{p.position, accurate});
    }
  }
  return out;
}

// Deterministic per-(session, source, point) displacement of a source map.
Vector3 source_offset(const ScenarioConfig& c, int session, int source, int wid) {
  const double sigma = source == 1 ? c.slam_point_noise : source == 2 ? c.dense_point_noise : 0.0;
  if (sigma <= 0.0) return Vector3::Zero();
  Pcg32 rng(derive_seed(c.seed, kSourceOffset,
                        static_cast<std::uint64_t>(session * 8 + source),
                        static_cast<std::uint64_t>(wid)));
  return sigma * Vector3(rng.normal(), rng.normal(), rng.normal());
}

struct PoolEntry {
  int wid;
  Vector2 pixel;  // noisy
  Vector3 map_point;
  bool accurate;
};

std::vector<PoolEntry> session_pool(const std::vector<Visible>& visible,
                                    const std::vector<Vector2>& pixels,
                                    const BuiltSession& session) {
  std::vector<PoolEntry> pool;
  for (std::size_t i = 0; i < visible.size(); ++i) {
    auto it = session.entries.find(visible[i].id);
    if (it != session.entries.end())
      pool.push_back({visible[i].id, pixels[i], it->second.position, it->second.accurate});
  }
  return pool;
}

std::vector<Vector2> noisy_pixels(const std::vector<Visible>& visible, double sigma,
                                  Pcg32& rng) {
  std::vector<Vector2> px;
  px.reserve(visible.size());
  for (const Visible& v : visible) px.push_back(noisy(v.pixel, sigma, rng));
  return px;
}

}  // namespace

void ScenarioConfig::validate() const {
  require(n_frames >= 2, "n_frames must be at least 2");
  require(n_sessions >= 1, "n_sessions must be at least 1");
  try {
    camera.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kInvalidConfig, e.what());
  }
  require(step_length >= 0.0 && step_length <= 5.0, "step_length must be in [0, 5]");
  require(is_rate(stop_rate), "stop_rate must be in [0, 1]");
  require(stop_length >= 0, "stop_length must be non-negative");
  require(heading_rate_sigma >= 0.0 && max_heading_rate >= 0.0,
          "heading rates must be non-negative");
  require(camera_height > 0.0, "camera_height must be positive");
  require(points_per_metre > 0.0, "points_per_metre must be positive");
  require(facade_min_offset > 0.0 && facade_max_offset >= facade_min_offset,
          "facade offsets must satisfy 0 < min <= max");
  require(facade_height >= 0.0, "facade_height must be non-negative");
  require(is_rate(ground_fraction), "ground_fraction must be in [0, 1]");
  require(max_depth > 2.0, "max_depth must exceed 2");
  require(pixel_noise >= 0.0 && map_pixel_noise >= 0.0, "pixel noise must be non-negative");
  require(is_rate(map_mismatch_rate), "map_mismatch_rate must be in [0, 1]");
  require(matches_per_source >= 0, "matches_per_source must be non-negative");
  require(slam_point_noise >= 0.0 && dense_point_noise >= 0.0,
          "source point noise must be non-negative");
  require(track_matches >= 0, "track_matches must be non-negative");
  require(is_rate(outlier_rate_2d3d), "outlier_rate_2d3d must be in [0, 1]");
  require(is_rate(outlier_rate_2d2d), "outlier_rate_2d2d must be in [0, 1]");
  require(is_rate(session_failure_rate), "session_failure_rate must be in [0, 1]");
  require(is_rate(candidate_outlier_rate), "candidate_outlier_rate must be in [0, 1]");
  require(is_rate(gross_outlier_rate), "gross_outlier_rate must be in [0, 1]");
  require(gross_outlier_offset >= 0.0, "gross_outlier_offset must be non-negative");
  require(is_rate(contamination_rate), "contamination_rate must be in [0, 1]");
  require(contamination_min_offset >= 0.0 &&
              contamination_max_offset >= contamination_min_offset,
          "contamination offsets must satisfy 0 <= min <= max");
  require(incompatible_bias >= 0.0, "incompatible_bias must be non-negative");
  require(incompatible_match_factor > 0.0, "incompatible_match_factor must be positive");
  require(odometry_drift >= 0.0 && odometry_rotation_drift >= 0.0,
          "odometry drift must be non-negative");
}

const char* to_string(CandidateKind kind) {
  switch (kind) {
    case CandidateKind::kClean: return "clean";
    case CandidateKind::kFailed: return "failed";
    case CandidateKind::kWrongPlace: return "wrong_place";
    case CandidateKind::kFrameOutlier: return "frame_outlier";
    case CandidateKind::kContaminated: return "contaminated";
    case CandidateKind::kBiased: return "biased";
  }
  return "?";
}

const CandidateLabel* GroundTruth::label(int frame_id, int session_id) const {
  // Labels are stored frame-major with one entry per session.
  if (!poses.empty() && frame_id >= 0 && session_id >= 0 &&
      candidates.size() % poses.size() == 0) {
    const std::size_t per_frame = candidates.size() / poses.size();
    const std::size_t i = static_cast<std::size_t>(frame_id) * per_frame +
                          static_cast<std::size_t>(session_id);
    if (i < candidates.size() && candidates[i].frame_id == frame_id &&
        candidates[i].session_id == session_id)
      return &candidates[i];
  }
  for (const CandidateLabel& l : candidates)
    if (l.frame_id == frame_id && l.session_id == session_id) return &l;
  return nullptr;
}

Scenario generate(const ScenarioConfig& c) {
  c.validate();
  const int K = c.n_frames;
  const int C = c.n_sessions;

  // Arc length of every query frame, with occasional stops.
  std::vector<double> arc(K);
  {
    Pcg32 rng(derive_seed(c.seed, kStops));
    double s = 10.0;
    int stopped = 0;
    for (int k = 0; k < K; ++k) {
      arc[k] = s;
      if (stopped > 0) {
        --stopped;
      } else if (c.stop_length > 0 && rng.bernoulli(c.stop_rate)) {
        stopped = c.stop_length;
      } else {
        s += c.step_length;
      }
    }
  }

  const Road road = make_road(c, arc.back() + c.max_depth + c.facade_max_offset + 10.0);
  const World world = make_world(c, road);
  const double query_lateral = 0.25 * c.session_lateral_offset;

  Scenario sc;
  sc.camera = c.camera;
  std::vector<BuiltSession> sessions;
  for (int s = 0; s < C; ++s) {
    sessions.push_back(build_session(c, road, world, s));
    sc.maps.push_back(sessions.back().map);
  }

  sc.truth.poses.resize(K);
  for (int k = 0; k < K; ++k)
    sc.truth.poses[k] = road_pose(road, arc[k], query_lateral, c.camera_height);

  // Query keypoints of every frame at its true pose; shared by the 2D-3D
  // matches and the tracks.
  std::vector<std::vector<Visible>> visible(K);
  std::vector<std::vector<Vector2>> pixels(K);
  for (int k = 0; k < K; ++k) {
    Pcg32 rng(derive_seed(c.seed, kQueryPixels, static_cast<std::uint64_t>(k)));
    visible[k] = visible_points(world, sc.truth.poses[k], arc[k], c);
    pixels[k] = noisy_pixels(visible[k], c.pixel_noise, rng);
  }

  const bool incompatible = c.incompatible_bias > 0.0;
  sc.frames.resize(K);
  sc.truth.matches.resize(K);
  for (int k = 0; k < K; ++k) {
    QueryFrame& frame = sc.frames[k];
    frame.frame_id = k;
    frame.timestamp = 0.1 * k;
    auto& labels = sc.truth.matches[k];
    const Pose& truth = sc.truth.poses[k];

    Pcg32 events(derive_seed(c.seed, kFrameEvents, static_cast<std::uint64_t>(k)));
    const bool frame_outlier = events.bernoulli(c.gross_outlier_rate);

    for (int s = 0; s < C; ++s) {
      Pcg32 rng(derive_seed(c.seed, kSessionMatches, static_cast<std::uint64_t>(k),
                            static_cast<std::uint64_t>(s)));
      // Every decision is drawn up front so the rates stay independent.
      const bool failed = rng.bernoulli(c.session_failure_rate);
      const bool wrong_place = rng.bernoulli(c.candidate_outlier_rate);
      const bool contaminated = rng.bernoulli(c.contamination_rate);
      const Vector3 wrong_dir = random_horizontal(rng);
      const Vector3 contamination_dir = random_horizontal(rng);
      const double contamination_offset =
          rng.uniform(c.contamination_min_offset, c.contamination_max_offset);
      const double contamination_share = rng.uniform(0.3, 0.7);

      CandidateLabel label{k, s, CandidateKind::kClean};
      if (failed) {
        label.kind = CandidateKind::kFailed;
        sc.truth.candidates.push_back(label);
        continue;
      }

      std::vector<PoolEntry> pool;
      const bool moved = frame_outlier || wrong_place;
      if (moved) {
        label.kind = frame_outlier ? CandidateKind::kFrameOutlier : CandidateKind::kWrongPlace;
        const Pose wrong(truth.rotation, truth.translation + c.gross_outlier_offset * wrong_dir);
        const std::vector<Visible> vis = visible_points(world, wrong, arc[k], c);
        pool = session_pool(vis, noisy_pixels(vis, c.pixel_noise, rng), sessions[s]);
      } else {
        pool = session_pool(visible[k], pixels[k], sessions[s]);
      }

      const bool biased = incompatible && s == C - 1;
      if (biased && !moved) label.kind = CandidateKind::kBiased;
      // Registration error of the keyframe nearest to this frame.
      Vector3 bias = Vector3::Zero();
      if (biased) {
        Pcg32 kf(derive_seed(c.seed, kDatabase, 1000 + static_cast<std::uint64_t>(s),
                             static_cast<std::uint64_t>(std::lround(arc[k]))));
        bias = c.incompatible_bias * random_unit(kf);
      }
      const double factor = biased ? c.incompatible_match_factor : 1.0;
      const auto per_source =
          static_cast<std::size_t>(std::lround(c.matches_per_source * factor));

      if (pool.empty()) {
        sc.truth.candidates.push_back(label);
        continue;
      }
      std::size_t session_inliers = 0;
      for (int src = 0; src < 3; ++src) {
        std::size_t n_out = 0;
        for (std::size_t i = 0; i < per_source; ++i) n_out += rng.bernoulli(c.outlier_rate_2d3d);
        const std::size_t n_in = per_source - n_out;
        for (std::size_t i : sample_indices(pool.size(), n_in, rng)) {
          const PoolEntry& e = pool[i];
          frame.matches.push_back({e.pixel,
                                   e.map_point + bias + source_offset(c, s, src, e.wid),
                                   kSources[src], s});
          labels.push_back(moved || !e.accurate ? MatchKind::kOutlier : MatchKind::kInlier);
          ++session_inliers;
        }
        for (std::size_t i = 0; i < n_out; ++i) {
          const PoolEntry& e = pool[rng.below(static_cast<std::uint32_t>(pool.size()))];
          frame.matches.push_back({random_pixel(c.camera, rng),
                                   e.map_point + bias + source_offset(c, s, src, e.wid),
                                   kSources[src], s});
          labels.push_back(MatchKind::kOutlier);
        }
      }

      if (contaminated && !moved) {
        if (label.kind == CandidateKind::kClean) label.kind = CandidateKind::kContaminated;
        const Pose near(truth.rotation,
                        truth.translation + contamination_offset * contamination_dir);
        const std::vector<Visible> vis = visible_points(world, near, arc[k], c);
        const std::vector<PoolEntry> cpool =
            session_pool(vis, noisy_pixels(vis, c.pixel_noise, rng), sessions[s]);
        const auto n = static_cast<std::size_t>(
            std::lround(contamination_share * static_cast<double>(session_inliers)));
        for (std::size_t i : sample_indices(cpool.size(), n, rng)) {
          const int src = static_cast<int>(rng.below(3));
          frame.matches.push_back({cpool[i].pixel, cpool[i].map_point + bias,
                                   kSources[src], s});
          labels.push_back(MatchKind::kContamination);
        }
      }
      sc.truth.candidates.push_back(label);
    }
  }

  // Odometry: true relative motion perturbed in proportion to the distance
  // travelled; the skip edges compose the two consecutive ones.
  {
    Pcg32 rng(derive_seed(c.seed, kOdometry));
    std::vector<Pose> steps(K - 1);
    for (int k = 0; k + 1 < K; ++k) {
      const Pose rel = relative_pose(sc.truth.poses[k], sc.truth.poses[k + 1]);
      const double d = rel.translation.norm();
      const double st = c.odometry_drift * d, sr = c.odometry_rotation_drift * d;
      const Vector3 dt(rng.normal(0.0, st), rng.normal(0.0, st), rng.normal(0.0, st));
      const Vector3 dr(rng.normal(0.0, sr), rng.normal(0.0, sr), rng.normal(0.0, sr));
      steps[k] = compose(rel, Pose(so3_exp(dr), dt));
    }
    for (int k = 0; k + 1 < K; ++k) {
      sc.odometry.push_back({k, k + 1, steps[k]});
      if (k + 2 < K) sc.odometry.push_back({k, k + 2, compose(steps[k], steps[k + 1])});
    }
  }

  // Tracks between frames k and k+1, k+2 from their shared keypoints.
  for (int k = 0; k + 1 < K; ++k) {
    for (int d = 1; d <= 2 && k + d < K; ++d) {
      Pcg32 rng(derive_seed(c.seed, kTracks, static_cast<std::uint64_t>(k),
                            static_cast<std::uint64_t>(d)));
      std::unordered_map<int, std::size_t> in_b;
      for (std::size_t i = 0; i < visible[k + d].size(); ++i) in_b[visible[k + d][i].id] = i;
      std::vector<std::pair<std::size_t, std::size_t>> shared;
      for (std::size_t i = 0; i < visible[k].size(); ++i) {
        auto it = in_b.find(visible[k][i].id);
        if (it != in_b.end()) shared.emplace_back(i, it->second);
      }
      MatchSet2D2D set{k, k + d, {}};
      std::vector<bool> outliers;
      for (std::size_t i :
           sample_indices(shared.size(), static_cast<std::size_t>(c.track_matches), rng)) {
        // A tracker searches a local window, so a mismatch lands near the
        // true correspondence rather than anywhere in the image.
        const bool outlier = rng.bernoulli(c.outlier_rate_2d2d);
        Vector2 b = pixels[k + d][shared[i].second];
        if (outlier) {
          const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
          b += rng.uniform(kMinMismatchPx, kMaxMismatchPx) * Vector2(std::cos(a), std::sin(a));
        }
        set.matches.push_back({pixels[k][shared[i].first], b});
        outliers.push_back(outlier);
      }
      sc.tracks.push_back(std::move(set));
      sc.truth.track_outliers.push_back(std::move(outliers));
    }
  }
  return sc;
}

Scenario scenario_incompatible_sessions(ScenarioConfig config, double bias) {
  config.incompatible_bias = bias;
  return generate(config);
}

Scenario scenario_contaminated(ScenarioConfig config, double rate) {
  config.contamination_rate = rate;
  return generate(config);
}

}  // namespace msloc
