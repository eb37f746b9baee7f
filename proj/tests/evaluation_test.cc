#include "msloc/evaluation.h"

#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "msloc/error.h"
#include "test_util.h"

namespace msloc {
namespace {

Trajectory random_trajectory(Pcg32& rng, int n) {
  Trajectory t;
  for (int k = 0; k < n; ++k) t.push_back({k, 0.1 * k, testing::random_pose(rng, 20.0)});
  return t;
}

Trajectory offset(const Trajectory& t, const Vector3& d) {
  Trajectory out = t;
  for (auto& e : out) e.pose.translation += d;
  return out;
}

TEST(Recall, IdentityIsFull) {
  Pcg32 rng(1);
  const Trajectory t = random_trajectory(rng, 50);
  const RecallTable r = recall_table(t, t);
  ASSERT_EQ(r.thresholds, default_recall_thresholds());
  for (double v : r.recall) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(r.localized, 50u);
}

TEST(Recall, ConstantOffset) {
  Pcg32 rng(2);
  const Trajectory t = random_trajectory(rng, 40);
  const RecallTable r = recall_table(offset(t, Vector3(0.15, 0.0, 0.0)), t, {0.1, 0.2});
  EXPECT_EQ(r.recall[0], 0.0);
  EXPECT_EQ(r.recall[1], 1.0);
}

TEST(Recall, MatchesBruteForce) {
  Pcg32 rng(3);
  const Trajectory truth = random_trajectory(rng, 200);
  Trajectory est;
  std::vector<double> err;
  for (const auto& e : truth) {
    if (rng.bernoulli(0.1)) {
      err.push_back(-1.0);  // missing
      continue;
    }
    const double mag = std::exp(rng.uniform(std::log(0.01), std::log(5.0)));
    const Vector3 dir = Vector3(rng.normal(), rng.normal(), rng.normal()).normalized();
    est.push_back({e.frame_id, e.timestamp, Pose(e.pose.rotation, e.pose.translation + mag * dir)});
    err.push_back(mag);
  }
  const RecallTable r = recall_table(est, truth);
  for (std::size_t i = 0; i < r.thresholds.size(); ++i) {
    int hits = 0;
    for (double e : err) hits += e >= 0.0 && e <= r.thresholds[i] + 1e-12;
    EXPECT_NEAR(r.recall[i], hits / 200.0, 1e-12);
  }
  // Recall never decreases with the threshold.
  for (std::size_t i = 1; i < r.recall.size(); ++i) EXPECT_GE(r.recall[i], r.recall[i - 1]);
}

TEST(Recall, MissingFramesCountAsFailures) {
  Pcg32 rng(4);
  const Trajectory truth = random_trajectory(rng, 10);
  const Trajectory half(truth.begin(), truth.begin() + 5);
  const RecallTable r = recall_table(half, truth);
  for (double v : r.recall) EXPECT_DOUBLE_EQ(v, 0.5);
  EXPECT_EQ(r.localized, 5u);
}

TEST(Recall, NoOverlap) {
  Pcg32 rng(5);
  const Trajectory a = random_trajectory(rng, 5);
  Trajectory b = random_trajectory(rng, 5);
  for (auto& e : b) e.frame_id += 100;
  try {
    recall_table(b, a);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoOverlap);
  }
  EXPECT_THROW(ate_rmse(b, a), Error);
}

TEST(Ate, IdentityAndConstantOffset) {
  Pcg32 rng(6);
  const Trajectory t = random_trajectory(rng, 30);
  EXPECT_EQ(ate_rmse(t, t), 0.0);
  const Trajectory shifted = offset(t, Vector3(0.6, 0.8, 0.0));
  EXPECT_NEAR(ate_rmse(shifted, t), 1.0, 1e-12);
  EXPECT_NEAR(ate_rmse(shifted, t, true), 0.0, 1e-9);
}

TEST(Ate, MatchesDirectRmse) {
  Pcg32 rng(7);
  const Trajectory truth = random_trajectory(rng, 100);
  Trajectory est = truth;
  double sum = 0.0;
  for (auto& e : est) {
    const Vector3 d(rng.normal(), rng.normal(), rng.normal());
    e.pose.translation += 0.1 * d;
    sum += (0.1 * d).squaredNorm();
  }
  EXPECT_NEAR(ate_rmse(est, truth), std::sqrt(sum / 100.0), 1e-12);
  EXPECT_LE(ate_rmse(est, truth, true), ate_rmse(est, truth) + 1e-12);
}

TEST(Ate, AlignedRemovesRigidTransform) {
  Pcg32 rng(8);
  const Trajectory truth = random_trajectory(rng, 50);
  const Pose T = testing::random_pose(rng, 3.0);
  Trajectory est = truth;
  for (auto& e : est) e.pose = compose(T, e.pose);
  EXPECT_GT(ate_rmse(est, truth), 0.1);
  EXPECT_LT(ate_rmse(est, truth, true), 1e-9);
}

TEST(Timing, EmptyAndSums) {
  EXPECT_TRUE(timing_report({}).empty());
  EXPECT_TRUE(timing_report({{"fuse", 12.0, 0}}).empty());
  const auto rows = timing_report(
      {{"localize", 100.0, 50}, {"fuse", 5.0, 50}, {"localize", 300.0, 150}});
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].stage, "localize");
  EXPECT_DOUBLE_EQ(rows[0].total_ms, 400.0);
  EXPECT_DOUBLE_EQ(rows[0].per_frame_ms, 2.0);
  EXPECT_EQ(rows[1].stage, "fuse");
  EXPECT_DOUBLE_EQ(rows[1].per_frame_ms, 0.1);
}

TEST(Format, RecallTableLayout) {
  Pcg32 rng(9);
  const Trajectory t = random_trajectory(rng, 10);
  const RecallColumns cols{{"baseline", recall_table(offset(t, Vector3(0.3, 0, 0)), t)},
                           {"PGBA", recall_table(t, t)}};
  const std::string csv = format_recall_csv(cols);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "threshold_m,baseline,PGBA");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  EXPECT_NE(csv.find("0.2,0.000000,1.000000"), std::string::npos);
  EXPECT_NE(csv.find("0.5,1.000000,1.000000"), std::string::npos);
  const std::string text = format_recall_text(cols);
  EXPECT_NE(text.find("100.00%"), std::string::npos);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
  const std::string timing = format_timing_csv(timing_report({{"fuse", 10.0, 4}}));
  EXPECT_EQ(timing, "stage,total_ms,per_frame_ms\nfuse,10.000,2.5000\n");
}

}  // namespace
}  // namespace msloc
