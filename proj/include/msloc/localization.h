#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "msloc/geometry.h"
#include "msloc/matches.h"

namespace msloc {

struct Candidate {
  int session_id = 0;
  Pose pose;
  std::vector<Match2D3D> inliers;

  int inlier_count() const { return static_cast<int>(inliers.size()); }
};

// Pose candidates of one query frame, at most one per session.
struct CandidateSet {
  int frame_id = 0;
  std::vector<Candidate> candidates;

  const Candidate* find_session(int session_id) const;
};

struct RansacOptions {
  double threshold_px = 3.0;
  int max_iterations = 1000;
  double confidence = 0.999;
  std::uint64_t seed = 0;
  int refine_iterations = 20;
};

struct PnPResult {
  Pose pose;
  std::vector<std::size_t> inlier_indices;
  std::vector<Match2D3D> inliers;
  int iterations = 0;
};

// Up to four world_from_camera solutions mapping the three world points onto
// the three unit bearings (camera frame).
std::vector<Pose> solve_p3p(std::span<const Vector3, 3> bearings,
                            std::span<const Vector3, 3> world_points);

// Damped least-squares refinement of the reprojection error over `matches`.
Pose refine_pose(const Pose& initial, std::span<const Match2D3D> matches,
                 const CameraIntrinsics& camera, int max_iterations);

double reprojection_error(const Pose& pose, const CameraIntrinsics& camera,
                          const Match2D3D& match);

// Keeps one match per query point (points closer than `radius_px` count as
// the same point): the one with the smallest reprojection error under
// `pose_hint`. Survivors keep their input order.
std::vector<Match2D3D> dedupe_matches(std::span<const Match2D3D> matches,
                                      const Pose& pose_hint,
                                      const CameraIntrinsics& camera,
                                      double radius_px = 0.5);

// Throws TooFewMatches for fewer than 4 matches and NoConsensus when no
// hypothesis reaches 4 inliers. Deterministic in options.seed.
PnPResult ransac_pnp(std::span<const Match2D3D> matches,
                     const CameraIntrinsics& camera,
                     const RansacOptions& options);

// Seed of the per-source RANSAC run inside localize_session().
std::uint64_t localization_seed(std::uint64_t base, int frame_id, int session_id,
                                MatchSource source);

struct LocalizationOptions {
  RansacOptions ransac;
  double dedupe_radius_px = 0.5;
  int min_inliers = 4;
};

// Per-source RANSAC, union of per-source inliers, dedupe and a final RANSAC
// over the combined set, for the matches of one session. Returns nullopt when
// the session cannot be localized.
std::optional<Candidate> localize_session(int frame_id, int session_id,
                                          std::span<const Match2D3D> matches,
                                          const CameraIntrinsics& camera,
                                          const LocalizationOptions& options);

// One candidate per session that localizes; sessions are read from the
// matches' session_id.
CandidateSet localize_frame(int frame_id, std::span<const Match2D3D> matches,
                            const CameraIntrinsics& camera,
                            const LocalizationOptions& options);

// Baseline that ignores session boundaries: all matches pooled into one
// localization. The candidate carries session_id -1.
std::optional<Candidate> localize_merged(int frame_id,
                                         std::span<const Match2D3D> matches,
                                         const CameraIntrinsics& camera,
                                         const LocalizationOptions& options);

}  // namespace msloc
