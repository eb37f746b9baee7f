#pragma once

#include <cstdint>
#include <vector>

#include "msloc/geometry.h"
#include "msloc/map_build.h"
#include "msloc/matches.h"

namespace msloc {

struct ScenarioConfig {
  int n_frames = 1000;
  int n_sessions = 3;
  CameraIntrinsics camera{500.0, 500.0, 320.0, 240.0, 640, 480};

  // Road and traversal.
  double step_length = 1.0;        // metres per query frame
  double stop_rate = 0.005;        // chance per frame that the vehicle stops
  int stop_length = 4;             // frames per stop
  double heading_rate_sigma = 0.004;
  double max_heading_rate = 0.04;  // rad per metre
  double session_lateral_offset = 0.8;
  double camera_height = 1.5;

  // Structure.
  double points_per_metre = 14.0;
  double facade_min_offset = 5.0;
  double facade_max_offset = 14.0;
  double facade_height = 9.0;
  double ground_fraction = 0.25;
  double max_depth = 45.0;

  // Observation noise and outliers.
  double pixel_noise = 1.0;          // query keypoints, px
  double map_pixel_noise = 0.5;      // database keypoints, px
  double map_mismatch_rate = 0.02;   // database 2D-2D mismatches
  int matches_per_source = 50;
  // Displacement of the SLAM and dense maps' points from the SfM map, metres.
  double slam_point_noise = 0.03;
  double dense_point_noise = 0.06;
  double outlier_rate_2d3d = 0.3;
  double outlier_rate_2d2d = 0.1;
  int track_matches = 100;

  // Candidate corruption.
  double session_failure_rate = 0.05;
  double candidate_outlier_rate = 0.1;  // one session matched to the wrong place
  double gross_outlier_rate = 0.1;      // every session matched to the wrong place
  double gross_outlier_offset = 5.0;    // metres
  double contamination_rate = 0.0;      // per frame and session
  double contamination_min_offset = 0.1;
  double contamination_max_offset = 0.3;
  // The last session's map is registered per keyframe with an error of this
  // magnitude (random direction) and yields incompatible_match_factor times
  // as many matches. Zero disables.
  double incompatible_bias = 0.0;
  double incompatible_match_factor = 2.0;

  // Odometry drift.
  double odometry_drift = 0.01;            // metres per metre
  double odometry_rotation_drift = 0.0005;  // radians per metre

  std::uint64_t seed = 1;

  void validate() const;  // throws InvalidConfig
};

// What went into one (frame, session) candidate.
enum class CandidateKind {
  kClean,
  kFailed,        // no matches
  kWrongPlace,    // matched to a place gross_outlier_offset away
  kFrameOutlier,  // like kWrongPlace, but for every session of the frame
  kContaminated,  // clean matches plus a cluster consistent with a nearby pose
  kBiased,        // incompatible session
};

const char* to_string(CandidateKind kind);

enum class MatchKind { kInlier, kOutlier, kContamination };

struct CandidateLabel {
  int frame_id = 0;
  int session_id = 0;
  CandidateKind kind = CandidateKind::kClean;
};

struct QueryFrame {
  int frame_id = 0;
  double timestamp = 0.0;
  std::vector<Match2D3D> matches;  // all sessions and sources
};

struct OdometryEdge {
  int frame_a = 0;
  int frame_b = 0;
  Pose z;  // relative_pose(X_a, X_b)
};

struct GroundTruth {
  std::vector<Pose> poses;                       // per query frame
  std::vector<CandidateLabel> candidates;        // per frame and session
  std::vector<std::vector<MatchKind>> matches;   // aligned with QueryFrame::matches
  std::vector<std::vector<bool>> track_outliers; // aligned with the tracks

  const CandidateLabel* label(int frame_id, int session_id) const;
};

struct Scenario {
  CameraIntrinsics camera;
  std::vector<SessionMap> maps;
  std::vector<QueryFrame> frames;
  std::vector<OdometryEdge> odometry;  // (k, k+1) and (k, k+2)
  std::vector<MatchSet2D2D> tracks;    // (k, k+1) and (k, k+2)
  GroundTruth truth;
};

Scenario generate(const ScenarioConfig& config);

// One session's map is incompatible with the others: see incompatible_bias.
Scenario scenario_incompatible_sessions(ScenarioConfig config, double bias = 0.5);

// Match sets contaminated by clusters consistent with poses 0.1-0.3 m off.
Scenario scenario_contaminated(ScenarioConfig config, double rate = 0.3);

}  // namespace msloc
