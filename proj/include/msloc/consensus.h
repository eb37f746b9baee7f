#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "msloc/geometry.h"
#include "msloc/localization.h"
#include "msloc/matches.h"

namespace msloc {

using ScoreMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct ConsensusOptions {
  double sampson_threshold = 4.0;  // squared pixels
  // Relative translations shorter than this make the epipolar test
  // meaningless; such edges score 0 and are flagged.
  double min_baseline = 0.02;
};

// Number of matches whose Sampson error under the fundamental matrix of the
// two poses is within the threshold. A degenerate baseline scores 0 and sets
// *degenerate.
int edge_score(const Pose& pose_a, const Pose& pose_b,
               std::span<const Match2D2D> matches, const CameraIntrinsics& camera,
               const ConsensusOptions& options = {}, bool* degenerate = nullptr);

// Score matrix between consecutive non-empty frames.
struct ChainLink {
  std::size_t from = 0;  // frame index
  std::size_t to = 0;    // frame index, > from; to > from + 1 bridges empty frames
  ScoreMatrix scores;    // nodes[from] x nodes[to]
  int degenerate_edges = 0;
};

struct ChainGraph {
  std::vector<int> frame_ids;
  std::vector<std::vector<int>> nodes;  // session ids of the candidates per frame
  std::vector<ChainLink> links;

  std::size_t edge_count() const;
  // Graph with frames 0..K-1 whose node counts are taken from the matrices;
  // frame k+1 has scores[k].cols() nodes.
  static ChainGraph from_scores(std::span<const ScoreMatrix> scores);
};

struct Selection {
  std::vector<int> frame_ids;
  std::vector<std::optional<int>> choice;  // candidate index per frame
  std::int64_t score = 0;
};

// Throws EmptySequence for an empty input. Tracks are looked up by
// (frame_a, frame_b); bridges over empty frames use the skip track between
// the two surrounding frames if present, else score zero.
ChainGraph build_chain(std::span<const CandidateSet> candidates,
                       std::span<const MatchSet2D2D> tracks,
                       const CameraIntrinsics& camera,
                       const ConsensusOptions& options = {});

// Exact maximum-score path through the chain; ties go to lower indices.
Selection solve_dp(const ChainGraph& graph);

// Branch and bound over the 0-1 edge variables with the one-edge-per-link and
// flow-consistency constraints written out explicitly. Reference solver for
// small graphs: throws TooLarge beyond 12 frames or 4 candidates per frame.
Selection solve_ilp_oracle(const ChainGraph& graph);

// Selected pose per frame (nullopt where nothing was selected).
std::vector<std::optional<Pose>> selected_poses(std::span<const CandidateSet> candidates,
                                                const Selection& selection);

// Score of the selected edge into each frame; 0 for the first selected frame
// and for frames without a selection. Sums to selection.score.
std::vector<std::int64_t> incoming_scores(const ChainGraph& graph, const Selection& selection);

}  // namespace msloc
