#include "msloc/io.h"

#include <filesystem>

#include <gtest/gtest.h>

#include "msloc/error.h"
#include "test_util.h"

namespace msloc {
namespace {

constexpr double kTol = 1e-12;

const Scenario& scenario() {
  static const Scenario sc = [] {
    ScenarioConfig c;
    c.n_frames = 25;
    c.seed = 21;
    c.contamination_rate = 0.2;
    return generate(c);
  }();
  return sc;
}

void expect_pose_near(const Pose& a, const Pose& b) {
  EXPECT_LT((a.translation - b.translation).norm(), kTol);
  EXPECT_LT((a.rotation.coeffs() - b.rotation.coeffs()).norm(), kTol);
}

void expect_match_near(const Match2D3D& a, const Match2D3D& b) {
  EXPECT_LT((a.query_point - b.query_point).norm(), kTol);
  EXPECT_LT((a.world_point - b.world_point).norm(), kTol);
}

int parse_error_line(const std::function<void()>& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.line();
  }
  return -1;
}

TEST(Io, FormatDoubleRoundTripsExactly) {
  Pcg32 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-20.0, 20.0));
    EXPECT_EQ(std::stod(io::format_double(v)), v);
  }
}

TEST(Io, FramesAndTrajectoryRoundTrip) {
  const Scenario& sc = scenario();
  const auto frames = io::frame_infos(sc.frames);
  const auto frames2 = io::read_frames(io::write_frames(frames), "frames.txt");
  ASSERT_EQ(frames2.size(), frames.size());
  for (std::size_t k = 0; k < frames.size(); ++k) {
    EXPECT_EQ(frames2[k].frame_id, frames[k].frame_id);
    EXPECT_EQ(frames2[k].timestamp, frames[k].timestamp);
  }
  const Trajectory truth = truth_trajectory(sc);
  const std::string text = io::write_trajectory(truth, 2);
  EXPECT_EQ(io::read_round(text), 2);
  EXPECT_EQ(io::read_round(io::write_trajectory(truth)), 0);
  const Trajectory back = io::read_trajectory(text, "t.txt", frames);
  ASSERT_EQ(back.size(), truth.size());
  for (std::size_t k = 0; k < truth.size(); ++k) {
    EXPECT_EQ(back[k].frame_id, truth[k].frame_id);
    expect_pose_near(back[k].pose, truth[k].pose);
  }
}

TEST(Io, OdometryTracksCameraRoundTrip) {
  const Scenario& sc = scenario();
  const auto odo = io::read_odometry(io::write_odometry(sc.odometry), "odometry.txt");
  ASSERT_EQ(odo.size(), sc.odometry.size());
  for (std::size_t i = 0; i < odo.size(); ++i) {
    EXPECT_EQ(odo[i].frame_a, sc.odometry[i].frame_a);
    EXPECT_EQ(odo[i].frame_b, sc.odometry[i].frame_b);
    expect_pose_near(odo[i].z, sc.odometry[i].z);
  }
  const auto tracks = io::read_tracks(io::write_tracks(sc.tracks), "tracks.txt");
  ASSERT_EQ(tracks.size(), sc.tracks.size());
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    ASSERT_EQ(tracks[i].matches.size(), sc.tracks[i].matches.size());
    for (std::size_t j = 0; j < tracks[i].matches.size(); ++j) {
      EXPECT_LT((tracks[i].matches[j].a - sc.tracks[i].matches[j].a).norm(), kTol);
      EXPECT_LT((tracks[i].matches[j].b - sc.tracks[i].matches[j].b).norm(), kTol);
    }
  }
  const CameraIntrinsics K = io::read_camera(io::write_camera(sc.camera), "camera.txt");
  EXPECT_EQ(K.fx, sc.camera.fx);
  EXPECT_EQ(K.cy, sc.camera.cy);
  EXPECT_EQ(K.width, sc.camera.width);
  EXPECT_EQ(K.height, sc.camera.height);
}

TEST(Io, QueryMatchesAndCandidatesRoundTrip) {
  const Scenario& sc = scenario();
  const auto frames = io::frame_infos(sc.frames);
  const auto q = io::read_query_matches(io::write_query_matches(sc.frames), "qm.txt", frames);
  ASSERT_EQ(q.size(), sc.frames.size());
  for (std::size_t k = 0; k < q.size(); ++k) {
    EXPECT_EQ(q[k].timestamp, sc.frames[k].timestamp);
    ASSERT_EQ(q[k].matches.size(), sc.frames[k].matches.size());
    for (std::size_t i = 0; i < q[k].matches.size(); ++i) {
      expect_match_near(q[k].matches[i], sc.frames[k].matches[i]);
      EXPECT_EQ(q[k].matches[i].source, sc.frames[k].matches[i].source);
      EXPECT_EQ(q[k].matches[i].session_id, sc.frames[k].matches[i].session_id);
    }
  }
  const auto cands = localize_all(sc.frames, sc.camera, {});
  const auto back = io::read_candidates(io::write_candidates(cands), "cand.txt", frames);
  ASSERT_EQ(back.size(), cands.size());
  for (std::size_t k = 0; k < cands.size(); ++k) {
    ASSERT_EQ(back[k].candidates.size(), cands[k].candidates.size());
    for (std::size_t i = 0; i < cands[k].candidates.size(); ++i) {
      const Candidate& a = back[k].candidates[i];
      const Candidate& b = cands[k].candidates[i];
      EXPECT_EQ(a.session_id, b.session_id);
      expect_pose_near(a.pose, b.pose);
      ASSERT_EQ(a.inliers.size(), b.inliers.size());
      for (std::size_t j = 0; j < a.inliers.size(); ++j) {
        expect_match_near(a.inliers[j], b.inliers[j]);
        EXPECT_EQ(a.inliers[j].session_id, b.session_id);
      }
    }
  }
}

TEST(Io, MapRoundTrip) {
  const SessionMap& map = scenario().maps.at(1);
  const SessionMap back = io::read_map(io::write_map(map), "map.txt");
  EXPECT_EQ(back.session_id, map.session_id);
  ASSERT_EQ(back.frames.size(), map.frames.size());
  for (std::size_t i = 0; i < map.frames.size(); ++i) {
    EXPECT_EQ(back.frames[i].id, map.frames[i].id);
    EXPECT_EQ(back.frames[i].timestamp, map.frames[i].timestamp);
    EXPECT_EQ(back.frames[i].camera.fx, map.frames[i].camera.fx);
    expect_pose_near(back.frames[i].pose, map.frames[i].pose);
  }
  ASSERT_EQ(back.points.size(), map.points.size());
  for (std::size_t i = 0; i < map.points.size(); ++i) {
    EXPECT_EQ(back.points[i].id, map.points[i].id);
    EXPECT_LT((back.points[i].position - map.points[i].position).norm(), kTol);
    ASSERT_EQ(back.points[i].observations.size(), map.points[i].observations.size());
    for (std::size_t j = 0; j < map.points[i].observations.size(); ++j) {
      EXPECT_EQ(back.points[i].observations[j].frame_id, map.points[i].observations[j].frame_id);
      EXPECT_LT((back.points[i].observations[j].pixel - map.points[i].observations[j].pixel).norm(),
                kTol);
    }
  }
  EXPECT_NO_THROW(validate_session_map(back));
}

TEST(Io, SelectionWeightsLogRoundTrip) {
  const Scenario& sc = scenario();
  const auto cands = localize_all(sc.frames, sc.camera, {});
  const ChainGraph graph = build_chain(cands, sc.tracks, sc.camera, {});
  const Selection sel = solve_dp(graph);
  const auto scores = incoming_scores(graph, sel);
  const Selection back =
      io::read_selection(io::write_selection(sel, cands, scores), "sel.txt", cands);
  EXPECT_EQ(back.choice, sel.choice);
  EXPECT_EQ(back.score, sel.score);
  EXPECT_EQ(back.frame_ids, sel.frame_ids);

  const std::vector<int> ids{3, 4, 9};
  const std::vector<double> w{0.0, 1.0 / 3.0, 0.999999999999};
  const auto wb = io::read_weights(io::write_weights(ids, w), "w.txt");
  ASSERT_EQ(wb.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(wb[i].frame_id, ids[i]);
    EXPECT_EQ(wb[i].weight, w[i]);
  }

  const std::vector<IterationRecord> log{{0, "E", 12.5, 0.0, 0.25}, {1, "M", 3.0 / 7.0, 0.0, 1.5}};
  const auto lb = io::read_iteration_log(io::write_iteration_log(log), "log.csv");
  ASSERT_EQ(lb.size(), 2u);
  EXPECT_EQ(lb[1].step, "M");
  EXPECT_EQ(lb[1].objective, log[1].objective);
  EXPECT_EQ(lb[0].runtime_ms, log[0].runtime_ms);
}

TEST(Io, LabelsRoundTrip) {
  const Scenario& sc = scenario();
  const GroundTruth back =
      io::read_labels(io::write_labels(sc.truth, sc.frames, sc.tracks), "labels.txt", sc.frames,
                      sc.tracks);
  ASSERT_EQ(back.candidates.size(), sc.truth.candidates.size());
  for (std::size_t i = 0; i < back.candidates.size(); ++i) {
    EXPECT_EQ(back.candidates[i].frame_id, sc.truth.candidates[i].frame_id);
    EXPECT_EQ(back.candidates[i].session_id, sc.truth.candidates[i].session_id);
    EXPECT_EQ(back.candidates[i].kind, sc.truth.candidates[i].kind);
  }
  EXPECT_EQ(back.matches, sc.truth.matches);
  EXPECT_EQ(back.track_outliers, sc.truth.track_outliers);
}

TEST(Io, ParseErrorsNameTheLine) {
  const auto frames = io::frame_infos(scenario().frames);
  const std::string good = io::write_candidates(localize_all(scenario().frames, scenario().camera, {}));
  // Corrupt the third line.
  std::string bad = good;
  std::size_t pos = 0;
  for (int i = 0; i < 2; ++i) pos = bad.find('\n', pos) + 1;
  bad.insert(pos, "CAND 0 zero 1 2 3 0 0 0 1 0\n");
  try {
    io::read_candidates(bad, "cand.txt", frames);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
    EXPECT_EQ(e.file(), "cand.txt");
    EXPECT_NE(std::string(e.what()).find("cand.txt:3"), std::string::npos);
  }
  EXPECT_EQ(parse_error_line([] { io::read_odometry("# c\n0 1 0 0 0 0 0 0 1\n0 1 0 0\n", "o"); }), 3);
  EXPECT_EQ(parse_error_line([] { io::read_odometry("0 1 0 0 0 0 0 0 0\n", "o"); }), 1);
  EXPECT_EQ(parse_error_line([] { io::read_tracks("0 1 1 2 3 nan\n", "t"); }), 1);
  EXPECT_EQ(parse_error_line([&] { io::read_trajectory("\n\n7.25 0 0 0 0 0 0 1\n", "t", frames); }),
            3);
  // Fewer M2D3D records than announced: the CAND line is named.
  EXPECT_EQ(parse_error_line([&] {
              io::read_candidates("CAND 0 0 0 0 0 0 0 0 1 2\nM2D3D 1 2 3 4 5\n", "c", frames);
            }),
            1);
  // Two candidates for one session.
  EXPECT_EQ(parse_error_line([&] {
              io::read_candidates("CAND 0 0 0 0 0 0 0 0 1 0\nCAND 0 0 0 0 0 0 0 0 1 0\n", "c",
                                  frames);
            }),
            2);
  EXPECT_EQ(parse_error_line([] { io::read_map("SESSION 0\nFRAME 0 0 0 0 0 0 0 0 1\n", "m"); }), 2);
  EXPECT_EQ(parse_error_line([] { io::read_camera("CAMERA -1 1 0 0 10 10\n", "c"); }), 1);
}

TEST(Io, MissingFile) {
  try {
    io::read_text(std::filesystem::temp_directory_path() / "msloc-does-not-exist.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kMissingInput);
  }
}

TEST(Config, WriteReadIsLossless) {
  io::Config c;
  c.seed = 77;
  c.scenario.n_frames = 123;
  c.scenario.outlier_rate_2d3d = 0.1234567890123;
  c.pipeline.refine.u = 0.75;
  c.variant = RefineVariant::kPgo2d2d;
  c.pipeline.polish.min_inliers = 9;
  const std::string text = io::write_config(c);
  const io::Config back = io::read_config(text, "cfg");
  EXPECT_EQ(io::write_config(back), text);
  EXPECT_EQ(back.scenario.outlier_rate_2d3d, 0.1234567890123);
  EXPECT_EQ(back.variant, RefineVariant::kPgo2d2d);
  // Every key is listed exactly once.
  const auto keys = io::config_keys();
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), keys.size());
  for (const auto& k : keys) EXPECT_NE(text.find(k + " = "), std::string::npos) << k;
}

TEST(Config, DefaultsMatchTheStructs) {
  const io::Config c = io::read_config(io::write_config(io::Config{}), "cfg");
  EXPECT_EQ(c.scenario.n_frames, ScenarioConfig{}.n_frames);
  EXPECT_EQ(c.pipeline.refine.lambda1, RefineOptions{}.lambda1);
  EXPECT_EQ(c.pipeline.consensus.sampson_threshold, ConsensusOptions{}.sampson_threshold);
  EXPECT_EQ(c.pipeline.polish.threshold_px, PolishOptions{}.threshold_px);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, OverridesAndErrors) {
  io::Config c = io::read_config("# comment\nseed=5\n  refine.u =  0.25  # trailing\n", "cfg");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.pipeline.refine.u, 0.25);
  io::set_config_value(c, "refine.variant", "PGO");
  const io::Config r = c.resolved();
  EXPECT_EQ(r.scenario.seed, 5u);
  EXPECT_EQ(r.pipeline.localization.ransac.seed, 5u);
  EXPECT_EQ(r.pipeline.polish.ransac.seed, 5u);
  EXPECT_FALSE(r.pipeline.refine.use_reprojection);
  EXPECT_FALSE(r.pipeline.refine.use_sampson);

  auto code = [](const std::function<void()>& f) {
    try {
      f();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kParseError;  // sentinel: nothing thrown
  };
  EXPECT_EQ(code([] { io::read_config("nonsense.key = 1\n", "cfg"); }), ErrorCode::kInvalidConfig);
  EXPECT_EQ(code([] { io::read_config("seed 1\n", "cfg"); }), ErrorCode::kInvalidConfig);
  EXPECT_EQ(code([] { io::read_config("scenario.n_frames = 1.5\n", "cfg"); }),
            ErrorCode::kInvalidConfig);
  EXPECT_EQ(code([] { io::read_config("refine.variant = fancy\n", "cfg"); }),
            ErrorCode::kInvalidConfig);
  try {
    io::read_config("seed = 1\n\nbogus = 2\n", "my.cfg");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("my.cfg:3"), std::string::npos) << e.what();
  }
  io::Config bad;
  bad.scenario.outlier_rate_2d3d = 1.5;
  EXPECT_EQ(code([&] { bad.validate(); }), ErrorCode::kInvalidConfig);
  io::Config bad2;
  bad2.pipeline.localization.ransac.confidence = 1.0;
  EXPECT_EQ(code([&] { bad2.validate(); }), ErrorCode::kInvalidConfig);
}

}  // namespace
}  // namespace msloc
