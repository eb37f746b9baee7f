#pragma once

#include <span>
#include <vector>

#include "msloc/geometry.h"
#include "msloc/matches.h"

namespace msloc {

struct MapFrame {
  int id = 0;
  double timestamp = 0.0;
  Pose pose;
  CameraIntrinsics camera;
};

struct MapObservation {
  int frame_id = 0;
  Vector2 pixel = Vector2::Zero();
  // Index into the source view's keypoints when built in-process; -1 when
  // read from a file.
  int keypoint = -1;
};

struct MapPoint {
  int id = 0;
  Vector3 position = Vector3::Zero();
  std::vector<MapObservation> observations;
};

// Sparse reconstruction of one reference traversal.
struct SessionMap {
  int session_id = 0;
  std::vector<MapFrame> frames;
  std::vector<MapPoint> points;
  // Every retained observation reprojects within this many pixels.
  double max_reprojection_error = 4.0;

  const MapFrame* find_frame(int frame_id) const;
};

struct ViewObservation {
  Pose pose;
  CameraIntrinsics camera;
  Vector2 pixel = Vector2::Zero();
};

// Checks the observation / frame / reprojection invariants; throws
// InvalidInput naming the first violation.
void validate_session_map(const SessionMap& map);

// Sum over all observations of the squared pixel reprojection error.
double total_reprojection_error(const SessionMap& map);

// Refines one point against fixed views; never returns a point with a larger
// total squared reprojection error than `initial`.
Vector3 refine_point(const Vector3& initial,
                     std::span<const ViewObservation> observations,
                     int max_iterations, double gradient_tolerance = 1e-12);

// Indices of matches whose Sampson error under the poses is <= threshold.
std::vector<std::size_t> epipolar_inliers(const MatchSet2D2D& matches,
                                          const Pose& pose_a,
                                          const Pose& pose_b,
                                          const CameraIntrinsics& camera,
                                          double threshold);

MatchSet2D2D prune_epipolar(const MatchSet2D2D& matches, const Pose& pose_a,
                            const Pose& pose_b, const CameraIntrinsics& camera,
                            double threshold);

struct TriangulationOptions {
  double min_angle_deg = 1.0;
  int max_iterations = 20;
};

// DLT followed by damped least-squares refinement of the reprojection error.
Vector3 triangulate(std::span<const ViewObservation> observations,
                    const TriangulationOptions& options = {});

struct StructureRefinementOptions {
  int max_iterations = 20;
  double gradient_tolerance = 1e-12;
};

// Structure-only bundle adjustment: every point is refined independently with
// the frame poses held fixed. Steps that increase a point's error are rejected.
SessionMap refine_structure(const SessionMap& map,
                            const StructureRefinementOptions& options = {});

// --- Map construction from posed views --------------------------------------

struct DatabaseView {
  MapFrame frame;
  std::vector<Vector2> keypoints;
};

// Keypoint index pairs between two views.
struct IndexedMatches {
  int frame_a = 0;
  int frame_b = 0;
  std::vector<std::pair<int, int>> pairs;
};

struct MapBuildOptions {
  double epipolar_threshold = 4.0;
  double max_reprojection_error = 4.0;
  TriangulationOptions triangulation;
  StructureRefinementOptions refinement;
};

// Prune matches with the known poses, chain them into tracks, triangulate,
// drop observations that disagree with their track and refine the structure.
SessionMap build_session_map(int session_id,
                             std::span<const DatabaseView> views,
                             std::span<const IndexedMatches> matches,
                             const MapBuildOptions& options = {});

}  // namespace msloc
