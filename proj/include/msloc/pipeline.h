#pragma once

#include <optional>
#include <span>
#include <vector>

#include "msloc/consensus.h"
#include "msloc/evaluation.h"
#include "msloc/localization.h"
#include "msloc/pose_refine.h"
#include "msloc/simulator.h"

namespace msloc {

// Stages between the simulated front-end and the evaluation, each a function
// of its inputs only.

std::vector<CandidateSet> localize_all(std::span<const QueryFrame> frames,
                                       const CameraIntrinsics& camera,
                                       const LocalizationOptions& options);

// Pooled-matches baseline; frames that fail are absent.
Trajectory localize_merged_all(std::span<const QueryFrame> frames,
                               const CameraIntrinsics& camera,
                               const LocalizationOptions& options);

Selection fuse(std::span<const CandidateSet> candidates,
               std::span<const MatchSet2D2D> tracks, const CameraIntrinsics& camera,
               const ConsensusOptions& options);

// Selected candidate poses; frames without a selection are absent.
Trajectory selected_trajectory(std::span<const QueryFrame> frames,
                               std::span<const CandidateSet> candidates,
                               const Selection& selection);

// Priors from the selected candidates; relative terms from the consecutive
// odometry and, with skip_stride > 1, from (k, k + skip_stride) edges. Tracks
// attach to the relative term of the same frame pair. Throws InvalidInput when
// consecutive odometry is missing.
RefinementProblem make_problem(std::span<const QueryFrame> frames,
                               std::span<const CandidateSet> candidates,
                               const Selection& selection,
                               std::span<const OdometryEdge> odometry,
                               std::span<const MatchSet2D2D> tracks,
                               const CameraIntrinsics& camera, int skip_stride = 0);

Trajectory to_trajectory(std::span<const QueryFrame> frames, std::span<const Pose> poses);

Trajectory truth_trajectory(const Scenario& scenario);

// --- Polish -------------------------------------------------------------------

// Matches whose reprojection error under x is at most threshold_px, in input
// order.
std::vector<Match2D3D> guided_prune(const Pose& x, std::span<const Match2D3D> matches,
                                    const CameraIntrinsics& camera, double threshold_px = 3.0);

struct PolishOptions {
  double threshold_px = 3.0;
  RansacOptions ransac;
  int min_inliers = 4;
};

// Per-session candidates recomputed by RANSAC-PnP on the matches that survive
// pruning with the refined pose of each frame. refined[k] belongs to frames[k].
std::vector<CandidateSet> repose_candidates(std::span<const QueryFrame> frames,
                                            std::span<const Pose> refined,
                                            const CameraIntrinsics& camera,
                                            const PolishOptions& options);

struct PipelineOptions {
  LocalizationOptions localization;
  ConsensusOptions consensus;
  RefineOptions refine;
  PolishOptions polish;
  int skip_stride = 0;
};

// One consensus + refinement round.
struct RoundResult {
  int round = 0;  // 1 for the first pass, 2 after polishing
  std::vector<CandidateSet> candidates;
  Selection selection;
  RefinementProblem problem;
  RefineResult refined;
};

struct ScenarioInputs {
  std::span<const QueryFrame> frames;
  std::span<const OdometryEdge> odometry;
  std::span<const MatchSet2D2D> tracks;
  CameraIntrinsics camera;
};

ScenarioInputs inputs_of(const Scenario& scenario);

RoundResult run_round(const ScenarioInputs& in, std::vector<CandidateSet> candidates,
                      const PipelineOptions& options, int round = 1);

// The single extra round: prune with the refined poses, recompute the
// candidates, fuse and refine again. Throws InvalidInput unless `first` is a
// first-round result.
RoundResult polish(const ScenarioInputs& in, const RoundResult& first,
                   const PipelineOptions& options);

}  // namespace msloc
