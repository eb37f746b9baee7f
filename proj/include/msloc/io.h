#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msloc/consensus.h"
#include "msloc/evaluation.h"
#include "msloc/localization.h"
#include "msloc/map_build.h"
#include "msloc/pipeline.h"
#include "msloc/pose_refine.h"
#include "msloc/simulator.h"

// Line-oriented text formats. Blank lines and `#` comments are ignored;
// floats are written with 17 significant digits so every writer/reader pair
// round-trips exactly. Readers take the file name for error messages and
// throw ParseError with the 1-based line number.
namespace msloc::io {

std::string read_text(const std::filesystem::path& path);  // MissingInput
void write_text(const std::filesystem::path& path, const std::string& text);

std::string format_double(double v);

// `frame_id timestamp`: ties frame ids to the timestamps of trajectory files.
struct FrameInfo {
  int frame_id = 0;
  double timestamp = 0.0;
};
std::vector<FrameInfo> frame_infos(std::span<const QueryFrame> frames);
std::string write_frames(std::span<const FrameInfo> frames);
std::vector<FrameInfo> read_frames(std::string_view text, const std::string& name);

// `timestamp tx ty tz qx qy qz qw`. Timestamps resolve to frame ids through
// the frame table. A `# round N` comment records the refinement round.
std::string write_trajectory(const Trajectory& trajectory, int round = 0);
Trajectory read_trajectory(std::string_view text, const std::string& name,
                           std::span<const FrameInfo> frames);
int read_round(std::string_view text);  // 0 without a round comment

// `CAMERA fx fy cx cy width height`
std::string write_camera(const CameraIntrinsics& camera);
CameraIntrinsics read_camera(std::string_view text, const std::string& name);

// `frame_a frame_b tx ty tz qx qy qz qw`
std::string write_odometry(std::span<const OdometryEdge> edges);
std::vector<OdometryEdge> read_odometry(std::string_view text, const std::string& name);

// `frame_a frame_b u1 v1 u2 v2`, one line per correspondence; consecutive
// lines of one frame pair form a set.
std::string write_tracks(std::span<const MatchSet2D2D> tracks);
std::vector<MatchSet2D2D> read_tracks(std::string_view text, const std::string& name);

// `QM frame_id session_id source u v X Y Z`: the raw per-frame matches.
// Frames come from the frame table, so frames without matches survive.
std::string write_query_matches(std::span<const QueryFrame> frames);
std::vector<QueryFrame> read_query_matches(std::string_view text, const std::string& name,
                                           std::span<const FrameInfo> frames);

// `CAND frame_id session_id tx ty tz qx qy qz qw n_inliers` followed by
// n_inliers `M2D3D u v X Y Z` lines. The result holds one set per frame of
// the table, empty where the file has no candidate. Inliers read back carry
// the candidate's session and source SIM.
std::string write_candidates(std::span<const CandidateSet> candidates);
std::vector<CandidateSet> read_candidates(std::string_view text, const std::string& name,
                                          std::span<const FrameInfo> frames);

// `SESSION id`, then `CAMERA ...` before every run of frames sharing
// intrinsics, `FRAME id ts tx ty tz qx qy qz qw` and
// `POINT id X Y Z nobs frame_id u v ...`.
std::string write_map(const SessionMap& map);
SessionMap read_map(std::string_view text, const std::string& name);

// `SEL frame_id session_id score` for every frame: the session of the selected
// candidate (-1 for none) and the score of the selected edge into the frame.
std::string write_selection(const Selection& selection, std::span<const CandidateSet> candidates,
                            std::span<const std::int64_t> frame_scores);
Selection read_selection(std::string_view text, const std::string& name,
                         std::span<const CandidateSet> candidates);

// `W frame_id w`
struct FrameWeight {
  int frame_id = 0;
  double weight = 0.0;
};
std::string write_weights(std::span<const int> frame_ids, std::span<const double> weights);
std::vector<FrameWeight> read_weights(std::string_view text, const std::string& name);

// CSV `iter,step,objective,max_dw,runtime_ms`.
std::string write_iteration_log(std::span<const IterationRecord> log);
std::vector<IterationRecord> read_iteration_log(std::string_view text, const std::string& name);

// Ground-truth labels: `CLABEL frame session kind` for every candidate,
// `MLABEL frame index kind` for every non-inlier query match and
// `TLABEL frame_a frame_b index` for every track outlier. Poses are kept in
// a separate trajectory file and are not part of the result.
std::string write_labels(const GroundTruth& truth, std::span<const QueryFrame> frames,
                         std::span<const MatchSet2D2D> tracks);
GroundTruth read_labels(std::string_view text, const std::string& name,
                        std::span<const QueryFrame> frames, std::span<const MatchSet2D2D> tracks);

// --- Configuration ------------------------------------------------------------

// Every tunable of the simulator and the pipeline. `seed` drives the
// simulator and every RANSAC run.
struct Config {
  ScenarioConfig scenario;
  PipelineOptions pipeline;
  RefineVariant variant = RefineVariant::kPgba;
  std::uint64_t seed = 1;

  // Copies seed into the component options and applies the variant.
  Config resolved() const;
  void validate() const;  // throws InvalidConfig
};

// Flat `key = value` text listing every key.
std::string write_config(const Config& config);
// Applies the file's keys on top of `base`. Unknown keys and malformed
// values throw InvalidConfig naming the file and line.
Config read_config(std::string_view text, const std::string& name, Config base = {});
// Single `key=value` override, as given on the command line.
void set_config_value(Config& config, std::string_view key, std::string_view value);
std::vector<std::string> config_keys();

}  // namespace msloc::io
