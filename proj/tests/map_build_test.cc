#include "msloc/map_build.h"

#include <cmath>

#include <gtest/gtest.h>

#include "msloc/error.h"
#include "test_util.h"

namespace msloc {
namespace {

using testing::test_camera;

TEST(Triangulate, TwoNoiselessViews) {
  const CameraIntrinsics K = test_camera();
  const Vector3 X(0, 0, 5);
  const Pose a = Pose::from_translation({-0.25, 0, 0});
  const Pose b = Pose::from_translation({0.25, 0, 0});
  const std::vector<ViewObservation> obs{{a, K, project(a, K, X)},
                                         {b, K, project(b, K, X)}};
  EXPECT_LT((triangulate(obs) - X).norm(), 1e-6);
}

TEST(Triangulate, RecoversRandomPointsNoiseless) {
  Pcg32 rng(21);
  const CameraIntrinsics K = test_camera();
  for (int i = 0; i < 200; ++i) {
    const Pose a = Pose::from_translation({rng.normal(), rng.normal(), 0});
    const Pose b(so3_exp(Vector3(0, rng.normal(0, 0.05), 0)),
                 a.translation + Vector3(rng.uniform(0.5, 2.0), 0, rng.normal(0, 0.5)));
    const Vector3 X = testing::random_visible_point(rng, a, K, 3.0, 15.0);
    Vector2 xb;
    if (!try_project(b, K, X, &xb)) continue;
    const std::vector<ViewObservation> obs{{a, K, project(a, K, X)}, {b, K, xb}};
    EXPECT_LT((triangulate(obs) - X).norm(), 1e-6);
  }
}

TEST(Triangulate, IdenticalPosesAreRejected) {
  const CameraIntrinsics K = test_camera();
  const Pose a = Pose::from_translation({1, 2, 3});
  const Vector3 X(1, 2, 10);
  const std::vector<ViewObservation> obs{{a, K, project(a, K, X)},
                                         {a, K, project(a, K, X)}};
  try {
    triangulate(obs);
    FAIL() << "expected InsufficientParallax";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientParallax);
  }
}

TEST(Triangulate, SmallAngleIsRejected) {
  const CameraIntrinsics K = test_camera();
  const Vector3 X(0, 0, 100);
  const Pose a = Pose::from_translation({0, 0, 0});
  const Pose b = Pose::from_translation({0.5, 0, 0});  // ~0.29 degrees
  const std::vector<ViewObservation> obs{{a, K, project(a, K, X)},
                                         {b, K, project(b, K, X)}};
  EXPECT_THROW(triangulate(obs), Error);
}

TEST(Triangulate, PointBehindCamerasIsRejected) {
  const CameraIntrinsics K = test_camera();
  // Rays that only intersect behind both cameras.
  const Pose a = Pose::from_translation({-0.5, 0, 0});
  const Pose b = Pose::from_translation({0.5, 0, 0});
  const std::vector<ViewObservation> obs{{a, K, Vector2(K.cx - 60, K.cy)},
                                         {b, K, Vector2(K.cx + 60, K.cy)}};
  try {
    triangulate(obs);
    FAIL() << "expected CheiralityViolation";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCheiralityViolation);
  }
}

// Monte-Carlo: five views along a 0.5 m baseline, 0.5 px noise, 5 m depth.
TEST(Triangulate, NoisyFiveViews) {
  Pcg32 rng(22);
  const CameraIntrinsics K = test_camera();
  // Depth sigma is roughly z^2 * noise / (f * sqrt(views) * baseline spread) ~ 0.05 m.
  double sum = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Vector3 X(rng.uniform(-1, 1), rng.uniform(-1, 1), 5.0);
    std::vector<ViewObservation> obs;
    for (int v = 0; v < 5; ++v) {
      const Pose p = Pose::from_translation({-0.25 + 0.125 * v, 0, 0});
      Vector2 u = project(p, K, X);
      u += Vector2(rng.normal(0, 0.5), rng.normal(0, 0.5));
      obs.push_back({p, K, u});
    }
    const double err = (triangulate(obs) - X).norm();
    EXPECT_LT(err, 0.25);
    sum += err;
  }
  EXPECT_LT(sum / 200, 0.06);
}

TEST(PruneEpipolar, KeepsNoiselessInliers) {
  Pcg32 rng(23);
  const CameraIntrinsics K = test_camera();
  const Pose a = Pose::identity();
  const Pose b(so3_exp(Vector3(0, 0.02, 0)), Vector3(0.2, 0, 1.0));
  MatchSet2D2D set{0, 1, {}};
  while (set.matches.size() < 100) {
    const Vector3 X = testing::random_visible_point(rng, a, K, 5.0, 30.0);
    Vector2 xb;
    if (try_project(b, K, X, &xb)) set.matches.push_back({project(a, K, X), xb});
  }
  const MatchSet2D2D pruned = prune_epipolar(set, a, b, K, 1.0);
  EXPECT_EQ(pruned.matches.size(), set.matches.size());

  const MatchSet2D2D empty{0, 1, {}};
  EXPECT_TRUE(prune_epipolar(empty, a, b, K, 1.0).matches.empty());
}

TEST(PruneEpipolar, RemovesLabelledMismatches) {
  Pcg32 rng(24);
  const CameraIntrinsics K = test_camera();
  const Pose a = Pose::identity();
  const Pose b(so3_exp(Vector3(0, 0.02, 0)), Vector3(0.5, 0, 1.0));
  const Matrix3 F = fundamental_from_poses(a, b, K, K);
  MatchSet2D2D set{0, 1, {}};
  std::vector<bool> is_outlier;
  while (set.matches.size() < 200) {
    const Vector3 X = testing::random_visible_point(rng, a, K, 5.0, 30.0);
    Vector2 xb;
    if (!try_project(b, K, X, &xb)) continue;
    if (rng.bernoulli(0.3)) {
      set.matches.push_back({project(a, K, X), Vector2(rng.uniform(0, 640), rng.uniform(0, 480))});
      is_outlier.push_back(true);
    } else {
      set.matches.push_back({project(a, K, X), xb});
      is_outlier.push_back(false);
    }
  }
  const MatchSet2D2D pruned = prune_epipolar(set, a, b, K, 4.0);
  // Oracle: the label set. Every labelled mismatch whose Sampson error exceeds
  // the threshold is gone, every inlier stays.
  std::size_t expected = 0;
  for (std::size_t i = 0; i < set.matches.size(); ++i) {
    const double e = sampson_error(F, set.matches[i].a, set.matches[i].b);
    if (!is_outlier[i] || e <= 4.0) ++expected;
    bool present = false;
    for (const auto& m : pruned.matches) {
      if (m.a == set.matches[i].a && m.b == set.matches[i].b) present = true;
    }
    if (!is_outlier[i]) EXPECT_TRUE(present);
    if (is_outlier[i] && e > 4.0) EXPECT_FALSE(present);
  }
  EXPECT_EQ(pruned.matches.size(), expected);
  // Idempotent.
  EXPECT_EQ(prune_epipolar(pruned, a, b, K, 4.0).matches.size(), pruned.matches.size());
}

SessionMap make_map(Pcg32& rng, int n_points, double perturb) {
  const CameraIntrinsics K = test_camera();
  SessionMap map;
  map.max_reprojection_error = 1e9;
  for (int f = 0; f < 4; ++f) {
    map.frames.push_back({f, 0.1 * f, Pose::from_translation({0.4 * f, 0, 0}), K});
  }
  for (int i = 0; i < n_points; ++i) {
    const Vector3 X(rng.uniform(-3, 3), rng.uniform(-2, 2), rng.uniform(6, 12));
    MapPoint p{i, X, {}};
    for (const auto& f : map.frames) p.observations.push_back({f.id, project(f.pose, K, X)});
    p.position += Vector3(rng.normal(0, perturb), rng.normal(0, perturb),
                          rng.normal(0, perturb));
    map.points.push_back(p);
  }
  return map;
}

TEST(RefineStructure, OptimalMapIsFixedPoint) {
  Pcg32 rng(25);
  const SessionMap map = make_map(rng, 50, 0.0);
  const SessionMap out = refine_structure(map);
  for (std::size_t i = 0; i < map.points.size(); ++i) {
    EXPECT_LT((out.points[i].position - map.points[i].position).norm(), 1e-9);
  }
}

TEST(RefineStructure, ReducesErrorAndKeepsPosesBitExact) {
  Pcg32 rng(26);
  const SessionMap map = make_map(rng, 100, 0.1);
  const double before = total_reprojection_error(map);
  const SessionMap out = refine_structure(map);
  const double after = total_reprojection_error(out);
  EXPECT_LE(after, 0.1 * before);
  ASSERT_EQ(out.frames.size(), map.frames.size());
  for (std::size_t i = 0; i < map.frames.size(); ++i) {
    EXPECT_EQ(out.frames[i].pose.rotation.coeffs(), map.frames[i].pose.rotation.coeffs());
    EXPECT_EQ(out.frames[i].pose.translation, map.frames[i].pose.translation);
  }
}

TEST(RefineStructure, MonotoneUnderNoise) {
  Pcg32 rng(27);
  SessionMap map = make_map(rng, 60, 0.05);
  for (auto& p : map.points) {
    for (auto& o : p.observations) o.pixel += Vector2(rng.normal(0, 1), rng.normal(0, 1));
  }
  double prev = total_reprojection_error(map);
  StructureRefinementOptions one;
  one.max_iterations = 1;
  for (int i = 0; i < 10; ++i) {
    map = refine_structure(map, one);
    const double now = total_reprojection_error(map);
    EXPECT_LE(now, prev * (1.0 + 1e-12));
    prev = now;
  }
}

// Oracle: midpoint of the common perpendicular of the two viewing rays, which
// is the exact intersection for noiseless observations.
TEST(RefineStructure, TwoViewMatchesMidpoint) {
  const CameraIntrinsics K = test_camera();
  const Pose a = Pose::from_translation({0, 0, 0});
  const Pose b(so3_exp(Vector3(0, -0.05, 0)), Vector3(0.7, 0.1, 0));
  const Vector3 X(0.4, -0.3, 7.0);
  const Vector2 ua = project(a, K, X);
  const Vector2 ub = project(b, K, X);

  const Vector3 da = a.rotation * bearing(K, ua);
  const Vector3 db = b.rotation * bearing(K, ub);
  const Vector3 w0 = a.center() - b.center();
  const double A = da.dot(da), B = da.dot(db), C = db.dot(db);
  const double D = da.dot(w0), E = db.dot(w0);
  const double s = (B * E - C * D) / (A * C - B * B);
  const double t = (A * E - B * D) / (A * C - B * B);
  const Vector3 midpoint = 0.5 * ((a.center() + s * da) + (b.center() + t * db));

  SessionMap map;
  map.frames = {{0, 0.0, a, K}, {1, 0.1, b, K}};
  map.points = {{0, X + Vector3(0.05, -0.04, 0.3), {{0, ua}, {1, ub}}}};
  const SessionMap out = refine_structure(map);
  EXPECT_LT((out.points[0].position - midpoint).norm(), 1e-6);
}

TEST(BuildSessionMap, TriangulatesTracksAndHonoursInvariants) {
  Pcg32 rng(28);
  const CameraIntrinsics K = test_camera();
  std::vector<Vector3> world;
  for (int i = 0; i < 300; ++i) {
    world.emplace_back(rng.uniform(-6, 6), rng.uniform(-3, 3), rng.uniform(8, 25));
  }
  std::vector<DatabaseView> views;
  std::vector<std::vector<int>> ids;
  for (int f = 0; f < 6; ++f) {
    DatabaseView v;
    v.frame = {f, 0.1 * f, Pose::from_translation({0.5 * f, 0, 0.3 * f}), K};
    std::vector<int> id;
    for (int i = 0; i < static_cast<int>(world.size()); ++i) {
      Vector2 u;
      if (!try_project(v.frame.pose, K, world[i], &u) || !K.contains(u)) continue;
      v.keypoints.push_back(u + Vector2(rng.normal(0, 0.3), rng.normal(0, 0.3)));
      id.push_back(i);
    }
    views.push_back(v);
    ids.push_back(id);
  }
  std::vector<IndexedMatches> matches;
  for (int f = 0; f + 1 < 6; ++f) {
    IndexedMatches m{f, f + 1, {}};
    for (std::size_t ka = 0; ka < ids[f].size(); ++ka) {
      for (std::size_t kb = 0; kb < ids[f + 1].size(); ++kb) {
        if (ids[f][ka] == ids[f + 1][kb]) {
          m.pairs.emplace_back(static_cast<int>(ka), static_cast<int>(kb));
        }
      }
    }
    // Mismatches.
    for (int o = 0; o < 20; ++o) {
      m.pairs.emplace_back(static_cast<int>(rng.below(static_cast<std::uint32_t>(ids[f].size()))),
                           static_cast<int>(rng.below(static_cast<std::uint32_t>(ids[f + 1].size()))));
    }
    matches.push_back(m);
  }
  const SessionMap map = build_session_map(3, views, matches);
  EXPECT_EQ(map.session_id, 3);
  EXPECT_GT(map.points.size(), 200u);
  EXPECT_NO_THROW(validate_session_map(map));
  int accurate = 0;
  for (const auto& p : map.points) {
    const auto& o = p.observations.front();
    const int wid = ids[static_cast<std::size_t>(o.frame_id)][static_cast<std::size_t>(o.keypoint)];
    if ((p.position - world[static_cast<std::size_t>(wid)]).norm() < 0.3) ++accurate;
  }
  EXPECT_GT(accurate, static_cast<int>(0.95 * map.points.size()));
}

}  // namespace
}  // namespace msloc
