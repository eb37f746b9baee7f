#include "msloc/localization.h"

#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <tuple>

#include <gtest/gtest.h>

#include "msloc/error.h"
#include "msloc/simulator.h"
#include "test_util.h"

namespace msloc {
namespace {

using testing::make_matches;
using testing::test_camera;

Pose scene_pose(Pcg32& rng) {
  return Pose(so3_exp(Vector3(rng.normal(0, 0.1), rng.normal(0, 0.1), rng.normal(0, 0.1))),
              Vector3(rng.normal(0, 3), rng.normal(0, 3), rng.normal(0, 1)));
}

TEST(P3P, RecoversPoseFromThreeNoiselessPoints) {
  Pcg32 rng(31);
  const CameraIntrinsics K = test_camera();
  int recovered = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const Pose truth = testing::random_pose(rng);
    std::array<Vector3, 3> world;
    std::array<Vector3, 3> bearings;
    for (int i = 0; i < 3; ++i) {
      world[i] = testing::random_visible_point(rng, truth, K, 2.0, 20.0);
      bearings[i] = bearing(K, project(truth, K, world[i]));
    }
    double best = 1e9;
    for (const auto& s : solve_p3p(bearings, world)) {
      best = std::min(best, (s.translation - truth.translation).norm() +
                                rotation_angle_between(s, truth));
    }
    if (best < 1e-6) ++recovered;
  }
  // Near-degenerate triangles can cost a root; the vast majority must be exact.
  EXPECT_GE(recovered, 198);
}

TEST(P3P, EverySolutionFitsTheThreeBearings) {
  Pcg32 rng(33);
  const CameraIntrinsics K = test_camera();
  int solutions = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const Pose truth = testing::random_pose(rng);
    std::array<Vector3, 3> world;
    std::array<Vector3, 3> bearings;
    for (int i = 0; i < 3; ++i) {
      world[i] = testing::random_visible_point(rng, truth, K, 2.0, 20.0);
      bearings[i] = bearing(K, project(truth, K, world[i]));
    }
    for (const auto& s : solve_p3p(bearings, world)) {
      ++solutions;
      for (int i = 0; i < 3; ++i) {
        const Vector3 pc = s.transform_inverse(world[i]);
        EXPECT_GT(pc.z(), 0.0);
        EXPECT_LT((pc.normalized() - bearings[i].normalized()).norm(), 1e-6) << trial;
      }
    }
  }
  EXPECT_GE(solutions, 500);
}

TEST(RansacPnP, NoiselessRecoversTruth) {
  Pcg32 rng(32);
  const CameraIntrinsics K = test_camera();
  for (int trial = 0; trial < 20; ++trial) {
    const Pose truth = scene_pose(rng);
    const auto matches = make_matches(rng, truth, K, 100, 0.0, 0);
    RansacOptions opts;
    opts.seed = static_cast<std::uint64_t>(trial);
    const PnPResult r = ransac_pnp(matches, K, opts);
    EXPECT_LT((r.pose.translation - truth.translation).norm(), 1e-6);
    EXPECT_LT(rotation_angle_between(r.pose, truth), 1e-6);
    EXPECT_EQ(r.inliers.size(), 100u);
  }
}

TEST(RansacPnP, ThirtyPercentOutliers) {
  Pcg32 rng(33);
  const CameraIntrinsics K = test_camera();
  for (int trial = 0; trial < 20; ++trial) {
    const Pose truth = scene_pose(rng);
    // 70 inliers with 1px noise, 30 uniform outliers; scene depth 4-20 m.
    const auto matches = make_matches(rng, truth, K, 70, 1.0, 30);
    RansacOptions opts;
    opts.seed = 1000 + static_cast<std::uint64_t>(trial);
    const PnPResult r = ransac_pnp(matches, K, opts);
    EXPECT_LT((r.pose.translation - truth.translation).norm(), 0.05);
    // Outliers are the tail of the match list; an outlier only counts as
    // "caught" if it is geometrically inconsistent with the true pose.
    for (std::size_t idx : r.inlier_indices) {
      if (idx >= 70) {
        EXPECT_LE(reprojection_error(truth, K, matches[idx]), 3.0 + 3.0);
      }
    }
  }
}

TEST(RansacPnP, TooFewMatches) {
  Pcg32 rng(34);
  const CameraIntrinsics K = test_camera();
  const auto matches = make_matches(rng, Pose::identity(), K, 3, 0.0, 0);
  try {
    ransac_pnp(matches, K, {});
    FAIL() << "expected TooFewMatches";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTooFewMatches);
  }
}

TEST(RansacPnP, DeterministicUnderSeed) {
  Pcg32 rng(35);
  const CameraIntrinsics K = test_camera();
  const auto matches = make_matches(rng, scene_pose(rng), K, 60, 1.0, 40);
  RansacOptions opts;
  opts.seed = 77;
  const PnPResult a = ransac_pnp(matches, K, opts);
  const PnPResult b = ransac_pnp(matches, K, opts);
  EXPECT_EQ(a.pose.translation, b.pose.translation);
  EXPECT_EQ(a.pose.rotation.coeffs(), b.pose.rotation.coeffs());
  EXPECT_EQ(a.inlier_indices, b.inlier_indices);
}

TEST(Dedupe, NoDuplicatesIsIdentity) {
  Pcg32 rng(36);
  const CameraIntrinsics K = test_camera();
  const Pose pose = scene_pose(rng);
  const auto matches = make_matches(rng, pose, K, 50, 0.5, 0);
  const auto out = dedupe_matches(matches, pose, K);
  ASSERT_EQ(out.size(), matches.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out[i].query_point, matches[i].query_point);
  }
}

TEST(Dedupe, KeepsSmallestReprojectionError) {
  const CameraIntrinsics K = test_camera();
  const Pose pose = Pose::identity();
  const Vector3 X(1.0, 0.5, 10.0);
  const Vector2 u = project(pose, K, X);
  // Two 3D points for the same query pixel: 0.3px and 2.0px off.
  const Vector3 X_good = unproject(pose, K, u + Vector2(0.3, 0.0), 10.0);
  const Vector3 X_bad = unproject(pose, K, u + Vector2(0.0, 2.0), 12.0);
  const std::vector<Match2D3D> matches{{u, X_bad, MatchSource::kSfm, 0},
                                       {u, X_good, MatchSource::kDense, 0}};
  const auto out = dedupe_matches(matches, pose, K);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].world_point, X_good);
}

TEST(Dedupe, ThreeWayGroupKeepsArgmin) {
  Pcg32 rng(37);
  const CameraIntrinsics K = test_camera();
  const Pose pose = Pose::identity();
  for (int trial = 0; trial < 50; ++trial) {
    const Vector2 u(rng.uniform(50, 590), rng.uniform(50, 430));
    std::vector<Match2D3D> matches;
    for (int k = 0; k < 3; ++k) {
      const Vector2 off(rng.normal(0, 3), rng.normal(0, 3));
      matches.push_back({u + Vector2(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)),
                         unproject(pose, K, u + off, rng.uniform(5, 20)),
                         MatchSource::kSfm, 0});
    }
    // Brute-force argmin over the group.
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k) {
      if (reprojection_error(pose, K, matches[k]) <
          reprojection_error(pose, K, matches[best])) {
        best = k;
      }
    }
    const auto out = dedupe_matches(matches, pose, K);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(out[0].world_point, matches[best].world_point);
    // Idempotent.
    EXPECT_EQ(dedupe_matches(out, pose, K).size(), 1u);
  }
}

TEST(LocalizeFrame, SingleSourceReducesToRansac) {
  Pcg32 rng(38);
  const CameraIntrinsics K = test_camera();
  const Pose truth = scene_pose(rng);
  const auto matches = make_matches(rng, truth, K, 80, 1.0, 20, MatchSource::kSfm, 2);
  LocalizationOptions opts;
  opts.ransac.seed = 5;
  const CandidateSet set = localize_frame(7, matches, K, opts);
  ASSERT_EQ(set.candidates.size(), 1u);
  RansacOptions ro = opts.ransac;
  ro.seed = localization_seed(5, 7, 2, MatchSource::kSfm);
  const PnPResult direct = ransac_pnp(matches, K, ro);
  EXPECT_EQ(set.candidates[0].pose.translation, direct.pose.translation);
  EXPECT_EQ(set.candidates[0].pose.rotation.coeffs(), direct.pose.rotation.coeffs());
  EXPECT_EQ(set.candidates[0].inlier_count(), static_cast<int>(direct.inliers.size()));
  EXPECT_EQ(set.candidates[0].session_id, 2);
}

// Source A: 20 inliers among 100 matches; source B: 60 inliers, 15 outliers.
// Per-source RANSAC then union gives ~80 clean matches. Naive concatenation
// of all 175 raw matches at a budget too small for its inlier ratio fails.
TEST(LocalizeFrame, PerSourcePrefilterBeatsNaiveConcatenation) {
  const CameraIntrinsics K = test_camera();
  int prefilter_ok = 0;
  int naive_ok = 0;
  for (int trial = 0; trial < 30; ++trial) {
    Pcg32 rng(400 + static_cast<std::uint64_t>(trial));
    const Pose truth = scene_pose(rng);
    auto a = make_matches(rng, truth, K, 20, 0.5, 80, MatchSource::kSfm, 0);
    auto b = make_matches(rng, truth, K, 60, 0.5, 15, MatchSource::kDense, 0);
    // Structured junk in the concatenation: a cluster consistent with a
    // different pose, big enough to win against a starved budget.
    const Pose wrong(truth.rotation, truth.translation + Vector3(2.0, 0.0, 0.5));
    auto junk = make_matches(rng, wrong, K, 25, 0.5, 0, MatchSource::kSlam, 0);
    std::vector<Match2D3D> all = a;
    all.insert(all.end(), b.begin(), b.end());
    LocalizationOptions opts;
    opts.ransac.seed = 99 + static_cast<std::uint64_t>(trial);
    opts.ransac.max_iterations = 100;
    const auto cand = localize_session(trial, 0, all, K, opts);
    if (cand && (cand->pose.translation - truth.translation).norm() < 0.05) ++prefilter_ok;

    std::vector<Match2D3D> naive = all;
    naive.insert(naive.end(), junk.begin(), junk.end());
    for (auto& m : naive) m.source = MatchSource::kSim;
    RansacOptions ro = opts.ransac;
    try {
      const PnPResult r = ransac_pnp(naive, K, ro);
      if ((r.pose.translation - truth.translation).norm() < 0.05) ++naive_ok;
    } catch (const Error&) {
    }
  }
  EXPECT_GE(prefilter_ok, 29);
  EXPECT_LT(naive_ok, prefilter_ok);
}

// Labelled simulator data: the candidate's inlier set is never dirtier than
// the raw matches of its session.
TEST(LocalizeFrame, PrefilterNeverLowersInlierRatio) {
  ScenarioConfig config;
  config.n_frames = 50;
  config.seed = 17;
  config.session_failure_rate = 0.0;
  config.candidate_outlier_rate = 0.0;
  config.gross_outlier_rate = 0.0;
  const Scenario sc = generate(config);
  using Key = std::tuple<double, double, double, double, double>;
  auto key = [](const Match2D3D& m) {
    return Key{m.query_point.x(), m.query_point.y(), m.world_point.x(), m.world_point.y(),
               m.world_point.z()};
  };
  int trials = 0;
  int not_worse = 0;
  for (std::size_t k = 0; k < sc.frames.size(); ++k) {
    const QueryFrame& f = sc.frames[k];
    const CandidateSet set = localize_frame(f.frame_id, f.matches, sc.camera, {});
    for (int s = 0; s < config.n_sessions; ++s) {
      std::map<Key, bool> inlier;
      int raw = 0, raw_in = 0;
      for (std::size_t i = 0; i < f.matches.size(); ++i) {
        if (f.matches[i].session_id != s) continue;
        const bool in = sc.truth.matches[k][i] == MatchKind::kInlier;
        inlier[key(f.matches[i])] = in;
        ++raw;
        raw_in += in;
      }
      const Candidate* c = set.find_session(s);
      if (raw == 0 || c == nullptr) continue;
      int kept_in = 0;
      for (const Match2D3D& m : c->inliers) kept_in += inlier.at(key(m));
      ++trials;
      if (static_cast<double>(kept_in) / c->inlier_count() >=
          static_cast<double>(raw_in) / raw)
        ++not_worse;
    }
  }
  ASSERT_GE(trials, 100);
  EXPECT_GE(not_worse, 0.95 * trials);
}

TEST(LocalizeFrame, AllOutlierSessionHasNoCandidate) {
  Pcg32 rng(39);
  const CameraIntrinsics K = test_camera();
  const Pose truth = scene_pose(rng);
  auto good = make_matches(rng, truth, K, 60, 1.0, 10, MatchSource::kSfm, 0);
  auto bad = make_matches(rng, truth, K, 0, 1.0, 60, MatchSource::kSfm, 1);
  // Make the outliers unstructured: random depths and pixels.
  for (auto& m : bad) {
    m.world_point = truth.transform(Vector3(rng.uniform(-30, 30), rng.uniform(-30, 30),
                                            rng.uniform(-30, 30)));
  }
  std::vector<Match2D3D> all = good;
  all.insert(all.end(), bad.begin(), bad.end());
  LocalizationOptions opts;
  opts.min_inliers = 12;
  const CandidateSet set = localize_frame(0, all, K, opts);
  EXPECT_NE(set.find_session(0), nullptr);
  EXPECT_EQ(set.find_session(1), nullptr);
}

TEST(LocalizeFrame, CandidateInvariants) {
  Pcg32 rng(40);
  const CameraIntrinsics K = test_camera();
  const Pose truth = scene_pose(rng);
  std::vector<Match2D3D> all;
  for (int s = 0; s < 3; ++s) {
    for (MatchSource src : {MatchSource::kSfm, MatchSource::kSlam}) {
      auto m = make_matches(rng, truth, K, 40, 1.0, 10, src, s);
      all.insert(all.end(), m.begin(), m.end());
    }
  }
  const CandidateSet set = localize_frame(3, all, K, {});
  EXPECT_EQ(set.candidates.size(), 3u);
  for (const auto& c : set.candidates) {
    EXPECT_EQ(c.inlier_count(), static_cast<int>(c.inliers.size()));
    EXPECT_LT((c.pose.translation - truth.translation).norm(), 0.1);
    for (const auto& m : c.inliers) EXPECT_EQ(m.session_id, c.session_id);
  }
  const CandidateSet again = localize_frame(3, all, K, {});
  for (std::size_t i = 0; i < set.candidates.size(); ++i) {
    EXPECT_EQ(set.candidates[i].pose.translation, again.candidates[i].pose.translation);
  }
}

}  // namespace
}  // namespace msloc
