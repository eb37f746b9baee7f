#include "msloc/evaluation.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <unordered_map>

#include <Eigen/Geometry>

#include "msloc/error.h"

namespace msloc {

namespace {

// Translation errors of the truth frames, NaN where the estimate is missing.
std::vector<double> translation_errors(const Trajectory& estimated, const Trajectory& truth,
                                       std::size_t* shared) {
  std::unordered_map<int, const Pose*> est;
  for (const TrajectoryEntry& e : estimated) est.emplace(e.frame_id, &e.pose);
  std::vector<double> errors;
  errors.reserve(truth.size());
  *shared = 0;
  for (const TrajectoryEntry& t : truth) {
    auto it = est.find(t.frame_id);
    if (it == est.end()) {
      errors.push_back(std::nan(""));
    } else {
      errors.push_back((it->second->translation - t.pose.translation).norm());
      ++*shared;
    }
  }
  if (*shared == 0) throw Error(ErrorCode::kNoOverlap, "no frame ids in common");
  return errors;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

std::string aligned_table(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  for (const auto& row : rows) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i > 0) line += "  ";
      // Left-align the label column, right-align numbers.
      const std::string pad(width[i] - row[i].size(), ' ');
      line += i == 0 ? row[i] + pad : pad + row[i];
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  return out;
}

std::vector<std::vector<std::string>> recall_rows(const RecallColumns& columns, bool percent) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"threshold_m"};
  for (const auto& [name, table] : columns) header.push_back(name);
  rows.push_back(header);
  if (columns.empty()) return rows;
  const std::vector<double>& thresholds = columns.front().second.thresholds;
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    std::vector<std::string> row{fmt("%g", thresholds[i])};
    for (const auto& [name, table] : columns) {
      if (table.thresholds.size() != thresholds.size() || table.thresholds[i] != thresholds[i])
        throw Error(ErrorCode::kInvalidInput, "recall tables use different thresholds");
      row.push_back(percent ? fmt("%.2f%%", 100.0 * table.recall[i])
                            : fmt("%.6f", table.recall[i]));
    }
    rows.push_back(row);
  }
  return rows;
}

std::string csv(const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
    out += "\n";
  }
  return out;
}

std::vector<std::vector<std::string>> timing_rows(const std::vector<TimingRow>& rows) {
  std::vector<std::vector<std::string>> out{{"stage", "total_ms", "per_frame_ms"}};
  for (const TimingRow& r : rows)
    out.push_back({r.stage, fmt("%.3f", r.total_ms), fmt("%.4f", r.per_frame_ms)});
  return out;
}

}  // namespace

std::vector<double> default_recall_thresholds() { return {0.05, 0.1, 0.2, 0.5, 1.0, 3.0}; }

RecallTable recall_table(const Trajectory& estimated, const Trajectory& truth,
                         const std::vector<double>& thresholds) {
  RecallTable table;
  table.thresholds = thresholds;
  table.frames = truth.size();
  const std::vector<double> errors = translation_errors(estimated, truth, &table.localized);
  for (double tau : thresholds) {
    std::size_t hits = 0;
    for (double e : errors) hits += (!std::isnan(e) && e <= tau);
    table.recall.push_back(static_cast<double>(hits) / static_cast<double>(truth.size()));
  }
  return table;
}

double ate_rmse(const Trajectory& estimated, const Trajectory& truth, bool aligned) {
  std::unordered_map<int, const Pose*> est;
  for (const TrajectoryEntry& e : estimated) est.emplace(e.frame_id, &e.pose);
  std::vector<Vector3> a, b;
  for (const TrajectoryEntry& t : truth) {
    auto it = est.find(t.frame_id);
    if (it == est.end()) continue;
    a.push_back(it->second->translation);
    b.push_back(t.pose.translation);
  }
  if (a.empty()) throw Error(ErrorCode::kNoOverlap, "no frame ids in common");
  Eigen::Isometry3d T = Eigen::Isometry3d::Identity();
  if (aligned && a.size() >= 3) {
    Eigen::Matrix3Xd src(3, a.size()), dst(3, b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      src.col(static_cast<Eigen::Index>(i)) = a[i];
      dst.col(static_cast<Eigen::Index>(i)) = b[i];
    }
    T.matrix() = Eigen::umeyama(src, dst, false);
  } else if (aligned) {
    Vector3 mean = Vector3::Zero();
    for (std::size_t i = 0; i < a.size(); ++i) mean += b[i] - a[i];
    T.translation() = mean / static_cast<double>(a.size());
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (T * a[i] - b[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(a.size()));
}

std::vector<TimingRow> timing_report(const std::vector<StageTiming>& logs) {
  std::vector<TimingRow> rows;
  std::map<std::string, std::size_t> index;
  std::vector<std::size_t> frames;
  for (const StageTiming& log : logs) {
    if (log.frames == 0) continue;
    auto [it, inserted] = index.emplace(log.stage, rows.size());
    if (inserted) {
      rows.push_back({log.stage, 0.0, 0.0});
      frames.push_back(0);
    }
    rows[it->second].total_ms += log.total_ms;
    frames[it->second] += log.frames;
  }
  for (std::size_t i = 0; i < rows.size(); ++i)
    rows[i].per_frame_ms = rows[i].total_ms / static_cast<double>(frames[i]);
  return rows;
}

std::string format_recall_csv(const RecallColumns& columns) {
  return csv(recall_rows(columns, false));
}

std::string format_recall_text(const RecallColumns& columns) {
  return aligned_table(recall_rows(columns, true));
}

std::string format_timing_csv(const std::vector<TimingRow>& rows) {
  return csv(timing_rows(rows));
}

std::string format_timing_text(const std::vector<TimingRow>& rows) {
  return aligned_table(timing_rows(rows));
}

}  // namespace msloc
