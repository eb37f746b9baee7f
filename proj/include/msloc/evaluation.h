#pragma once

#include <string>
#include <utility>
#include <vector>

#include "msloc/geometry.h"

namespace msloc {

struct TrajectoryEntry {
  int frame_id = 0;
  double timestamp = 0.0;
  Pose pose;
};

// Frames that could not be localized are simply absent.
using Trajectory = std::vector<TrajectoryEntry>;

std::vector<double> default_recall_thresholds();  // metres

struct RecallTable {
  std::vector<double> thresholds;
  std::vector<double> recall;  // fraction of truth frames, per threshold
  std::size_t frames = 0;      // truth frames
  std::size_t localized = 0;   // truth frames present in the estimate
};

// Fraction of truth frames whose translation error is at most each threshold;
// frames missing from the estimate count as failures. Throws NoOverlap when
// no frame id is shared.
RecallTable recall_table(const Trajectory& estimated, const Trajectory& truth,
                         const std::vector<double>& thresholds = default_recall_thresholds());

// RMSE of translation errors over the shared frames. With `aligned`, the
// estimate is first mapped by the rigid transform minimizing that RMSE.
// Throws NoOverlap.
double ate_rmse(const Trajectory& estimated, const Trajectory& truth, bool aligned = false);

struct StageTiming {
  std::string stage;
  double total_ms = 0.0;
  std::size_t frames = 0;
};

struct TimingRow {
  std::string stage;
  double total_ms = 0.0;
  double per_frame_ms = 0.0;
};

// One row per stage, logs of the same stage summed. Stages without frames
// are omitted.
std::vector<TimingRow> timing_report(const std::vector<StageTiming>& logs);

// Threshold rows, one column per method.
using RecallColumns = std::vector<std::pair<std::string, RecallTable>>;
std::string format_recall_csv(const RecallColumns& columns);
std::string format_recall_text(const RecallColumns& columns);
std::string format_timing_csv(const std::vector<TimingRow>& rows);
std::string format_timing_text(const std::vector<TimingRow>& rows);

}  // namespace msloc
