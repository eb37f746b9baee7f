#include "msloc/pipeline.h"

#include <algorithm>

#include <gtest/gtest.h>

#include "msloc/error.h"
#include "test_util.h"

namespace msloc {
namespace {

ScenarioConfig noiseless(int frames = 20) {
  ScenarioConfig c;
  c.n_frames = frames;
  c.seed = 11;
  c.pixel_noise = 0.0;
  c.map_pixel_noise = 0.0;
  c.map_mismatch_rate = 0.0;
  c.slam_point_noise = 0.0;
  c.dense_point_noise = 0.0;
  c.outlier_rate_2d3d = 0.0;
  c.outlier_rate_2d2d = 0.0;
  c.session_failure_rate = 0.0;
  c.candidate_outlier_rate = 0.0;
  c.gross_outlier_rate = 0.0;
  c.odometry_drift = 0.0;
  c.odometry_rotation_drift = 0.0;
  return c;
}

bool same_match(const Match2D3D& a, const Match2D3D& b) {
  return a.query_point == b.query_point && a.world_point == b.world_point &&
         a.session_id == b.session_id && a.source == b.source;
}

// True when `sub` is an order-preserving subsequence of `all`.
bool is_subsequence(const std::vector<Match2D3D>& sub, const std::vector<Match2D3D>& all) {
  std::size_t j = 0;
  for (const Match2D3D& m : all)
    if (j < sub.size() && same_match(sub[j], m)) ++j;
  return j == sub.size();
}

TEST(GuidedPrune, ExactMatchesSurvive) {
  Pcg32 rng(1);
  const CameraIntrinsics K = testing::test_camera();
  const Pose x = testing::random_pose(rng);
  const auto matches = testing::make_matches(rng, x, K, 60, 0.0, 0);
  const auto kept = guided_prune(x, matches, K);
  ASSERT_EQ(kept.size(), matches.size());
  // Threshold 0 still keeps exact projections.
  EXPECT_EQ(guided_prune(x, matches, K, 0.0).size(), matches.size());
}

TEST(GuidedPrune, RemovesFarMatchesOnly) {
  Pcg32 rng(2);
  const CameraIntrinsics K = testing::test_camera();
  const Pose x = testing::random_pose(rng);
  std::vector<Match2D3D> matches = testing::make_matches(rng, x, K, 80, 0.5, 0);
  std::vector<bool> far(matches.size(), false);
  for (std::size_t i = 0; i < matches.size(); i += 3) {
    const double angle = rng.uniform(0.0, 6.283185307179586);
    matches[i].query_point += rng.uniform(10.0, 40.0) * Vector2(std::cos(angle), std::sin(angle));
    far[i] = true;
  }
  const auto kept = guided_prune(x, matches, K, 3.0);
  EXPECT_TRUE(is_subsequence(kept, matches));
  std::size_t expected = 0;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    Vector2 px;
    ASSERT_TRUE(try_project(x, K, matches[i].world_point, &px));
    const bool inside = (px - matches[i].query_point).norm() <= 3.0;
    EXPECT_EQ(inside, !far[i]) << i;
    expected += inside;
  }
  EXPECT_EQ(kept.size(), expected);
  // Idempotent.
  const auto again = guided_prune(x, kept, K, 3.0);
  ASSERT_EQ(again.size(), kept.size());
  for (std::size_t i = 0; i < kept.size(); ++i) EXPECT_TRUE(same_match(again[i], kept[i]));
}

TEST(GuidedPrune, PointsBehindTheCameraAreDropped) {
  const CameraIntrinsics K = testing::test_camera();
  const Pose x = Pose::identity();
  const std::vector<Match2D3D> matches{{Vector2(320, 240), Vector3(0, 0, -5), MatchSource::kSim, 0},
                                       {Vector2(320, 240), Vector3(0, 0, 5), MatchSource::kSim, 0}};
  const auto kept = guided_prune(x, matches, K);
  ASSERT_EQ(kept.size(), 1u);
  EXPECT_EQ(kept[0].world_point.z(), 5.0);
}

TEST(Repose, FrameEmptiedByPruningHasNoPrior) {
  const Scenario sc = generate(noiseless(12));
  std::vector<Pose> refined = sc.truth.poses;
  // Push frame 5 far enough that nothing reprojects within the threshold.
  refined[5].translation += Vector3(0.0, 0.0, 30.0);
  const auto candidates = repose_candidates(sc.frames, refined, sc.camera, PolishOptions{});
  ASSERT_EQ(candidates.size(), sc.frames.size());
  EXPECT_TRUE(candidates[5].candidates.empty());
  for (std::size_t k = 0; k < candidates.size(); ++k) {
    if (k == 5) continue;
    EXPECT_EQ(candidates[k].candidates.size(), sc.maps.size()) << k;
  }
  const Selection sel = fuse(candidates, sc.tracks, sc.camera, {});
  const RefinementProblem p =
      make_problem(sc.frames, candidates, sel, sc.odometry, sc.tracks, sc.camera);
  EXPECT_FALSE(p.priors[5].has_value());
  EXPECT_TRUE(p.priors[4].has_value());
}

TEST(MakeProblem, RelativeTermsAndSkipStride) {
  const Scenario sc = generate(noiseless(15));
  const auto candidates = localize_all(sc.frames, sc.camera, {});
  const Selection sel = fuse(candidates, sc.tracks, sc.camera, {});
  const RefinementProblem p =
      make_problem(sc.frames, candidates, sel, sc.odometry, sc.tracks, sc.camera);
  ASSERT_EQ(p.relatives.size(), 14u);
  for (const RelativeTerm& r : p.relatives) {
    EXPECT_EQ(r.b, r.a + 1);
    EXPECT_FALSE(r.matches.empty());
  }
  const RefinementProblem q =
      make_problem(sc.frames, candidates, sel, sc.odometry, sc.tracks, sc.camera, 2);
  EXPECT_EQ(q.relatives.size(), 14u + 13u);
  EXPECT_EQ(std::count_if(q.relatives.begin(), q.relatives.end(),
                          [](const RelativeTerm& r) { return r.b == r.a + 2; }),
            13);
}

TEST(MakeProblem, MissingOdometryIsInvalidInput) {
  const Scenario sc = generate(noiseless(10));
  const auto candidates = localize_all(sc.frames, sc.camera, {});
  const Selection sel = fuse(candidates, sc.tracks, sc.camera, {});
  std::vector<OdometryEdge> odometry;
  for (const OdometryEdge& e : sc.odometry)
    if (!(e.frame_a == 3 && e.frame_b == 4)) odometry.push_back(e);
  try {
    make_problem(sc.frames, candidates, sel, odometry, sc.tracks, sc.camera);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidInput);
  }
}

TEST(Polish, NoiselessPipelineIsAFixedPoint) {
  const Scenario sc = generate(noiseless(20));
  const ScenarioInputs in = inputs_of(sc);
  PipelineOptions options;
  const RoundResult first = run_round(in, localize_all(sc.frames, sc.camera, options.localization),
                                      options);
  EXPECT_EQ(first.round, 1);
  for (std::size_t k = 0; k < sc.frames.size(); ++k)
    EXPECT_LT((first.refined.poses[k].translation - sc.truth.poses[k].translation).norm(), 1e-6);
  const RoundResult second = polish(in, first, options);
  EXPECT_EQ(second.round, 2);
  for (std::size_t k = 0; k < sc.frames.size(); ++k) {
    EXPECT_LT((second.refined.poses[k].translation - first.refined.poses[k].translation).norm(),
              1e-9)
        << k;
    EXPECT_LT(second.refined.poses[k].rotation.angularDistance(first.refined.poses[k].rotation),
              1e-9)
        << k;
  }
  // Nothing is pruned from a noiseless frame.
  for (std::size_t k = 0; k < sc.frames.size(); ++k)
    EXPECT_EQ(guided_prune(first.refined.poses[k], sc.frames[k].matches, sc.camera).size(),
              sc.frames[k].matches.size());
}

TEST(Polish, RunsOnlyOnce) {
  const Scenario sc = generate(noiseless(8));
  const ScenarioInputs in = inputs_of(sc);
  PipelineOptions options;
  const RoundResult first = run_round(in, localize_all(sc.frames, sc.camera, {}), options);
  const RoundResult second = polish(in, first, options);
  try {
    polish(in, second, options);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidInput);
  }
}

TEST(Polish, ImprovesTightRecallOnNoisyScenario) {
  ScenarioConfig c;
  c.n_frames = 150;
  c.seed = 5;
  const Scenario sc = generate(c);
  const ScenarioInputs in = inputs_of(sc);
  PipelineOptions options;
  const RoundResult first = run_round(in, localize_all(sc.frames, sc.camera, {}), options);
  const RoundResult second = polish(in, first, options);
  const Trajectory truth = truth_trajectory(sc);
  const double before = recall_table(to_trajectory(sc.frames, first.refined.poses), truth, {0.05})
                            .recall[0];
  const double after = recall_table(to_trajectory(sc.frames, second.refined.poses), truth, {0.05})
                           .recall[0];
  EXPECT_GE(after, before - 0.02);
}

}  // namespace
}  // namespace msloc
