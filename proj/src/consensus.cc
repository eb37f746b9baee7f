#include "msloc/consensus.h"

#include <algorithm>
#include <map>
#include <utility>

#include "msloc/error.h"

namespace msloc {

int edge_score(const Pose& pose_a, const Pose& pose_b,
               std::span<const Match2D2D> matches, const CameraIntrinsics& camera,
               const ConsensusOptions& options, bool* degenerate) {
  if (degenerate != nullptr) *degenerate = false;
  if (matches.empty()) return 0;
  if ((pose_a.center() - pose_b.center()).norm() < options.min_baseline) {
    if (degenerate != nullptr) *degenerate = true;
    return 0;
  }
  const Matrix3 F = fundamental_from_poses(pose_a, pose_b, camera, camera);
  int count = 0;
  for (const auto& m : matches) {
    try {
      if (sampson_error(F, m.a, m.b) <= options.sampson_threshold) ++count;
    } catch (const Error&) {
      // A correspondence on both epipoles carries no information.
    }
  }
  return count;
}

std::size_t ChainGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& link : links) n += static_cast<std::size_t>(link.scores.size());
  return n;
}

ChainGraph ChainGraph::from_scores(std::span<const ScoreMatrix> scores) {
  ChainGraph g;
  const std::size_t K = scores.size() + 1;
  for (std::size_t k = 0; k < K; ++k) {
    g.frame_ids.push_back(static_cast<int>(k));
    const Eigen::Index n = k == 0 ? (scores.empty() ? 1 : scores[0].rows())
                                  : scores[k - 1].cols();
    std::vector<int> sessions(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) sessions[static_cast<std::size_t>(i)] = static_cast<int>(i);
    g.nodes.push_back(std::move(sessions));
  }
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (k + 1 < scores.size() && scores[k].cols() != scores[k + 1].rows()) {
      throw Error(ErrorCode::kInvalidInput, "score matrix dimensions do not chain");
    }
    g.links.push_back({k, k + 1, scores[k], 0});
  }
  return g;
}

ChainGraph build_chain(std::span<const CandidateSet> candidates,
                       std::span<const MatchSet2D2D> tracks,
                       const CameraIntrinsics& camera,
                       const ConsensusOptions& options) {
  if (candidates.empty()) throw Error(ErrorCode::kEmptySequence, "no frames");
  std::map<std::pair<int, int>, const MatchSet2D2D*> by_pair;
  for (const auto& t : tracks) by_pair[{t.frame_a, t.frame_b}] = &t;

  ChainGraph g;
  for (const auto& set : candidates) {
    if (!g.frame_ids.empty() && set.frame_id <= g.frame_ids.back()) {
      throw Error(ErrorCode::kInvalidInput, "candidate sets not ordered by frame");
    }
    g.frame_ids.push_back(set.frame_id);
    std::vector<int> sessions;
    for (const auto& c : set.candidates) sessions.push_back(c.session_id);
    g.nodes.push_back(std::move(sessions));
  }

  std::optional<std::size_t> prev;
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (candidates[k].candidates.empty()) continue;
    if (prev) {
      const CandidateSet& a = candidates[*prev];
      const CandidateSet& b = candidates[k];
      ChainLink link{*prev, k, ScoreMatrix::Zero(static_cast<Eigen::Index>(a.candidates.size()),
                                                 static_cast<Eigen::Index>(b.candidates.size())),
                     0};
      const auto it = by_pair.find({a.frame_id, b.frame_id});
      if (it != by_pair.end()) {
        for (std::size_t i = 0; i < a.candidates.size(); ++i) {
          for (std::size_t j = 0; j < b.candidates.size(); ++j) {
            bool degenerate = false;
            link.scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                edge_score(a.candidates[i].pose, b.candidates[j].pose, it->second->matches,
                           camera, options, &degenerate);
            if (degenerate) ++link.degenerate_edges;
          }
        }
      }
      g.links.push_back(std::move(link));
    }
    prev = k;
  }
  return g;
}

namespace {

Selection empty_selection(const ChainGraph& graph) {
  Selection s;
  s.frame_ids = graph.frame_ids;
  s.choice.assign(graph.frame_ids.size(), std::nullopt);
  // A lone non-empty frame has no edges; convention picks its first candidate.
  for (std::size_t k = 0; k < graph.nodes.size(); ++k) {
    if (!graph.nodes[k].empty()) s.choice[k] = 0;
  }
  return s;
}

}  // namespace

Selection solve_dp(const ChainGraph& graph) {
  Selection sel = empty_selection(graph);
  if (graph.links.empty()) return sel;

  std::vector<std::int64_t> best(static_cast<std::size_t>(graph.links[0].scores.rows()), 0);
  std::vector<std::vector<int>> back(graph.links.size());
  for (std::size_t l = 0; l < graph.links.size(); ++l) {
    const ScoreMatrix& S = graph.links[l].scores;
    std::vector<std::int64_t> next(static_cast<std::size_t>(S.cols()));
    back[l].assign(static_cast<std::size_t>(S.cols()), 0);
    for (Eigen::Index j = 0; j < S.cols(); ++j) {
      std::int64_t value = best[0] + S(0, j);
      int arg = 0;
      for (Eigen::Index i = 1; i < S.rows(); ++i) {
        const std::int64_t v = best[static_cast<std::size_t>(i)] + S(i, j);
        if (v > value) {
          value = v;
          arg = static_cast<int>(i);
        }
      }
      next[static_cast<std::size_t>(j)] = value;
      back[l][static_cast<std::size_t>(j)] = arg;
    }
    best = std::move(next);
  }

  int j = static_cast<int>(std::max_element(best.begin(), best.end()) - best.begin());
  sel.score = best[static_cast<std::size_t>(j)];
  for (std::size_t l = graph.links.size(); l-- > 0;) {
    sel.choice[graph.links[l].to] = j;
    j = back[l][static_cast<std::size_t>(j)];
    sel.choice[graph.links[l].from] = j;
  }
  return sel;
}

namespace {

struct Oracle {
  const ChainGraph& graph;
  // x[l] holds e_{l,i,j} row-major.
  std::vector<std::vector<int>> x;
  std::vector<std::int64_t> tail_bound;
  std::int64_t best = -1;
  std::vector<std::vector<int>> best_x;

  int var(std::size_t l, Eigen::Index i, Eigen::Index j) const {
    return x[l][static_cast<std::size_t>(i * graph.links[l].scores.cols() + j)];
  }

  // One selected edge per link.
  bool one_edge(std::size_t l) const {
    int sum = 0;
    for (int v : x[l]) sum += v;
    return sum == 1;
  }

  // Flow entering each node of the frame shared by links l-1 and l equals
  // the flow leaving it.
  bool flow_consistent(std::size_t l) const {
    const ScoreMatrix& in = graph.links[l - 1].scores;
    const ScoreMatrix& out = graph.links[l].scores;
    for (Eigen::Index j = 0; j < in.cols(); ++j) {
      int inflow = 0;
      int outflow = 0;
      for (Eigen::Index i = 0; i < in.rows(); ++i) inflow += var(l - 1, i, j);
      for (Eigen::Index m = 0; m < out.cols(); ++m) outflow += var(l, j, m);
      if (inflow != outflow) return false;
    }
    return true;
  }

  void branch(std::size_t l, std::int64_t value) {
    if (l == graph.links.size()) {
      if (value > best) {
        best = value;
        best_x = x;
      }
      return;
    }
    if (value + tail_bound[l] <= best) return;
    const ScoreMatrix& S = graph.links[l].scores;
    for (Eigen::Index i = 0; i < S.rows(); ++i) {
      for (Eigen::Index j = 0; j < S.cols(); ++j) {
        std::fill(x[l].begin(), x[l].end(), 0);
        x[l][static_cast<std::size_t>(i * S.cols() + j)] = 1;
        if (!one_edge(l)) continue;
        if (l > 0 && !flow_consistent(l)) continue;
        branch(l + 1, value + S(i, j));
      }
    }
    std::fill(x[l].begin(), x[l].end(), 0);
  }
};

}  // namespace

Selection solve_ilp_oracle(const ChainGraph& graph) {
  std::size_t frames = 0;
  for (const auto& n : graph.nodes) {
    if (n.empty()) continue;
    ++frames;
    if (n.size() > 4) throw Error(ErrorCode::kTooLarge, "more than 4 candidates per frame");
  }
  if (frames > 12) throw Error(ErrorCode::kTooLarge, "more than 12 frames");

  Selection sel = empty_selection(graph);
  if (graph.links.empty()) return sel;

  Oracle o{graph, {}, {}, -1, {}};
  o.x.resize(graph.links.size());
  o.tail_bound.assign(graph.links.size() + 1, 0);
  for (std::size_t l = 0; l < graph.links.size(); ++l) {
    o.x[l].assign(static_cast<std::size_t>(graph.links[l].scores.size()), 0);
  }
  for (std::size_t l = graph.links.size(); l-- > 0;) {
    o.tail_bound[l] = o.tail_bound[l + 1] + graph.links[l].scores.maxCoeff();
  }
  o.branch(0, 0);

  sel.score = o.best;
  for (std::size_t l = 0; l < graph.links.size(); ++l) {
    const ScoreMatrix& S = graph.links[l].scores;
    for (Eigen::Index i = 0; i < S.rows(); ++i) {
      for (Eigen::Index j = 0; j < S.cols(); ++j) {
        if (o.best_x[l][static_cast<std::size_t>(i * S.cols() + j)] == 1) {
          sel.choice[graph.links[l].from] = static_cast<int>(i);
          sel.choice[graph.links[l].to] = static_cast<int>(j);
        }
      }
    }
  }
  return sel;
}

std::vector<std::optional<Pose>> selected_poses(std::span<const CandidateSet> candidates,
                                                const Selection& selection) {
  if (candidates.size() != selection.choice.size()) {
    throw Error(ErrorCode::kInvalidInput, "selection does not match candidate sets");
  }
  std::vector<std::optional<Pose>> out(candidates.size());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (selection.choice[k]) {
      out[k] = candidates[k].candidates.at(static_cast<std::size_t>(*selection.choice[k])).pose;
    }
  }
  return out;
}

std::vector<std::int64_t> incoming_scores(const ChainGraph& graph, const Selection& selection) {
  if (selection.choice.size() != graph.frame_ids.size()) {
    throw Error(ErrorCode::kInvalidInput, "selection does not match the chain");
  }
  std::vector<std::int64_t> out(graph.frame_ids.size(), 0);
  for (const ChainLink& link : graph.links) {
    const auto& a = selection.choice[link.from];
    const auto& b = selection.choice[link.to];
    if (a && b) out[link.to] = link.scores(*a, *b);
  }
  return out;
}

}  // namespace msloc
