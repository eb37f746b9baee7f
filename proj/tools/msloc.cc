// Command-line driver: simulate -> localize -> fuse -> refine -> polish -> eval,
// plus `pipeline`, which runs every stage and writes a report.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "msloc/error.h"
#include "msloc/io.h"
#include "msloc/pipeline.h"

namespace fs = std::filesystem;
using namespace msloc;

namespace {

// Files of a simulated data directory.
struct DataLayout {
  fs::path dir;
  fs::path config() const { return dir / "config.txt"; }
  fs::path camera() const { return dir / "camera.txt"; }
  fs::path frames() const { return dir / "frames.txt"; }
  fs::path truth() const { return dir / "truth.txt"; }
  fs::path labels() const { return dir / "labels.txt"; }
  fs::path query_matches() const { return dir / "query_matches.txt"; }
  fs::path odometry() const { return dir / "odometry.txt"; }
  fs::path tracks() const { return dir / "tracks.txt"; }
  fs::path map(int session) const {
    return dir / "maps" / ("session_" + std::to_string(session) + ".txt");
  }
};

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("--config", args.file, "key = value config file");
  cmd->add_option("--set", args.overrides, "override, key=value (repeatable)");
  cmd->add_option("--seed", args.seed, "seed for the simulator and every RANSAC run");
}

// File config (or the data directory's), then --set, then --seed.
io::Config load_config(const ConfigArgs& args, const fs::path& data_dir = {}) {
  io::Config c;
  if (!args.file.empty()) {
    c = io::read_config(io::read_text(args.file), args.file);
  } else if (!data_dir.empty() && fs::exists(DataLayout{data_dir}.config())) {
    const fs::path p = DataLayout{data_dir}.config();
    c = io::read_config(io::read_text(p), p.string());
  }
  for (const std::string& kv : args.overrides) {
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::kInvalidConfig, "--set expects key=value, got '" + kv + "'");
    io::set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed) c.seed = *args.seed;
  c.validate();
  return c;
}

std::string read(const fs::path& p) { return io::read_text(p); }

// Query-side inputs of a data directory.
struct Inputs {
  CameraIntrinsics camera;
  std::vector<io::FrameInfo> frame_table;
  std::vector<QueryFrame> frames;
  std::vector<OdometryEdge> odometry;
  std::vector<MatchSet2D2D> tracks;

  ScenarioInputs view() const { return {frames, odometry, tracks, camera}; }
};

Inputs load_inputs(const fs::path& dir) {
  const DataLayout d{dir};
  Inputs in;
  in.camera = io::read_camera(read(d.camera()), d.camera().string());
  in.frame_table = io::read_frames(read(d.frames()), d.frames().string());
  in.frames =
      io::read_query_matches(read(d.query_matches()), d.query_matches().string(), in.frame_table);
  in.odometry = io::read_odometry(read(d.odometry()), d.odometry().string());
  in.tracks = io::read_tracks(read(d.tracks()), d.tracks().string());
  return in;
}

std::vector<CandidateSet> load_candidates(const fs::path& p, const Inputs& in) {
  return io::read_candidates(read(p), p.string(), in.frame_table);
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
      .count();
}

// --- Stages ----------------------------------------------------------------------

void write_scenario(const Scenario& sc, const io::Config& config, const fs::path& dir) {
  const DataLayout d{dir};
  io::write_text(d.config(), io::write_config(config));
  io::write_text(d.camera(), io::write_camera(sc.camera));
  io::write_text(d.frames(), io::write_frames(io::frame_infos(sc.frames)));
  io::write_text(d.truth(), io::write_trajectory(truth_trajectory(sc)));
  io::write_text(d.labels(), io::write_labels(sc.truth, sc.frames, sc.tracks));
  io::write_text(d.query_matches(), io::write_query_matches(sc.frames));
  io::write_text(d.odometry(), io::write_odometry(sc.odometry));
  io::write_text(d.tracks(), io::write_tracks(sc.tracks));
  for (const SessionMap& m : sc.maps) io::write_text(d.map(m.session_id), io::write_map(m));
}

StageTiming stage_localize(const Inputs& in, const io::Config& c, const fs::path& out,
                           const fs::path& merged_out, std::vector<CandidateSet>* result) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<CandidateSet> cands = localize_all(in.frames, in.camera, c.pipeline.localization);
  const double ms = elapsed_ms(start);
  io::write_text(out, io::write_candidates(cands));
  if (!merged_out.empty())
    io::write_text(merged_out, io::write_trajectory(localize_merged_all(
                                   in.frames, in.camera, c.pipeline.localization)));
  if (result) *result = std::move(cands);
  return {"localize", ms, in.frames.size()};
}

StageTiming stage_fuse(const Inputs& in, const io::Config& c,
                       const std::vector<CandidateSet>& cands, const fs::path& selection_out,
                       const fs::path& trajectory_out, Selection* result) {
  const auto start = std::chrono::steady_clock::now();
  const ChainGraph graph = build_chain(cands, in.tracks, in.camera, c.pipeline.consensus);
  Selection sel = solve_dp(graph);
  const double ms = elapsed_ms(start);
  io::write_text(selection_out, io::write_selection(sel, cands, incoming_scores(graph, sel)));
  io::write_text(trajectory_out,
                 io::write_trajectory(selected_trajectory(in.frames, cands, sel)));
  if (result) *result = std::move(sel);
  return {"fuse", ms, in.frames.size()};
}

struct RefineOutputs {
  fs::path trajectory, weights, log;
};

void write_refined(const Inputs& in, const RoundResult& r, const RefineOutputs& out) {
  io::write_text(out.trajectory,
                 io::write_trajectory(to_trajectory(in.frames, r.refined.poses), r.round));
  io::write_text(out.weights, io::write_weights(r.problem.frame_ids, r.refined.weights));
  io::write_text(out.log, io::write_iteration_log(r.refined.log));
}

StageTiming stage_refine(const Inputs& in, const io::Config& c,
                         const std::vector<CandidateSet>& cands, const Selection& sel,
                         const RefineOutputs& out, RoundResult* result) {
  const auto start = std::chrono::steady_clock::now();
  RoundResult r;
  r.round = 1;
  r.candidates = cands;
  r.selection = sel;
  r.problem = make_problem(in.frames, cands, sel, in.odometry, in.tracks, in.camera,
                           c.pipeline.skip_stride);
  r.refined = refine(r.problem, c.pipeline.refine);
  const double ms = elapsed_ms(start);
  write_refined(in, r, out);
  StageTiming t{std::string("refine ") + to_string(c.variant), ms, in.frames.size()};
  if (result) *result = std::move(r);
  return t;
}

StageTiming stage_polish(const Inputs& in, const io::Config& c, const RoundResult& first,
                         const fs::path& candidates_out, const fs::path& selection_out,
                         const RefineOutputs& out, RoundResult* result) {
  const auto start = std::chrono::steady_clock::now();
  RoundResult r = polish(in.view(), first, c.pipeline);
  const double ms = elapsed_ms(start);
  io::write_text(candidates_out, io::write_candidates(r.candidates));
  const ChainGraph graph = build_chain(r.candidates, in.tracks, in.camera, c.pipeline.consensus);
  io::write_text(selection_out,
                 io::write_selection(r.selection, r.candidates, incoming_scores(graph, r.selection)));
  write_refined(in, r, out);
  if (result) *result = std::move(r);
  return {"polish", ms, in.frames.size()};
}

// Recall table plus one ATE row per method.
void write_report(const io::Config& c, const RecallColumns& columns,
                  const std::vector<std::pair<std::string, double>>& ate, const fs::path& csv,
                  const fs::path& text) {
  std::string t = format_recall_text(columns);
  std::string ate_line = "ate_rmse_m";
  std::string ate_csv = "ate_rmse_m";
  for (const auto& [name, v] : ate) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "  %s=%.4f", name.c_str(), v);
    ate_line += buf;
    ate_csv += "," + io::format_double(v);
  }
  t += "\n" + ate_line + "\n";
  t += "# frames " + std::to_string(c.scenario.n_frames) + ", sessions " +
       std::to_string(c.scenario.n_sessions) + ", seed " + std::to_string(c.seed) + "\n";
  io::write_text(csv, format_recall_csv(columns) + ate_csv + "\n");
  io::write_text(text, t);
}

void print_json_error(const std::string& kind, const std::string& message,
                      const std::string& file = {}, int line = 0) {
  nlohmann::json j{{"error", kind}, {"message", message}};
  if (!file.empty()) {
    j["file"] = file;
    j["line"] = line;
  }
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-session visual localization back-end"};
  app.require_subcommand(1);

  // simulate
  ConfigArgs sim_cfg;
  std::string sim_out;
  auto* sim = app.add_subcommand("simulate", "generate a synthetic multi-session scenario");
  add_config_options(sim, sim_cfg);
  sim->add_option("--out", sim_out, "output data directory")->required();

  // localize
  ConfigArgs loc_cfg;
  std::string loc_data, loc_out, loc_merged;
  auto* loc = app.add_subcommand("localize", "per-session candidate poses for every frame");
  add_config_options(loc, loc_cfg);
  loc->add_option("--data", loc_data, "data directory")->required();
  loc->add_option("--out", loc_out, "candidate file")->required();
  loc->add_option("--merged-out", loc_merged, "trajectory of the pooled-matches baseline");

  // fuse
  ConfigArgs fuse_cfg;
  std::string fuse_data, fuse_cands, fuse_sel, fuse_traj;
  auto* fu = app.add_subcommand("fuse", "consensus selection of one candidate per frame");
  add_config_options(fu, fuse_cfg);
  fu->add_option("--data", fuse_data, "data directory")->required();
  fu->add_option("--candidates", fuse_cands, "candidate file")->required();
  fu->add_option("--selection-out", fuse_sel, "selection file")->required();
  fu->add_option("--trajectory-out", fuse_traj, "selected trajectory")->required();

  // refine
  ConfigArgs ref_cfg;
  std::string ref_data, ref_cands, ref_sel, ref_variant;
  RefineOutputs ref_out;
  auto* re = app.add_subcommand("refine", "EM pose-graph refinement of the selected poses");
  add_config_options(re, ref_cfg);
  re->add_option("--data", ref_data, "data directory")->required();
  re->add_option("--candidates", ref_cands, "candidate file")->required();
  re->add_option("--selection", ref_sel, "selection file")->required();
  re->add_option("--variant", ref_variant, "PGO, PGO+2D-2D, PGO+2D-3D or PGBA");
  re->add_option("--trajectory-out", ref_out.trajectory, "refined trajectory")->required();
  re->add_option("--weights-out", ref_out.weights, "per-frame weights")->required();
  re->add_option("--log-out", ref_out.log, "iteration log (CSV)")->required();

  // polish
  ConfigArgs pol_cfg;
  std::string pol_data, pol_traj, pol_cands, pol_sel;
  RefineOutputs pol_out;
  auto* po = app.add_subcommand("polish", "one pruning + consensus + refinement round");
  add_config_options(po, pol_cfg);
  po->add_option("--data", pol_data, "data directory")->required();
  po->add_option("--trajectory", pol_traj, "first-round refined trajectory")->required();
  po->add_option("--candidates-out", pol_cands, "recomputed candidate file")->required();
  po->add_option("--selection-out", pol_sel, "selection file")->required();
  po->add_option("--trajectory-out", pol_out.trajectory, "polished trajectory")->required();
  po->add_option("--weights-out", pol_out.weights, "per-frame weights")->required();
  po->add_option("--log-out", pol_out.log, "iteration log (CSV)")->required();

  // eval
  std::string ev_data, ev_csv, ev_text;
  std::vector<std::string> ev_estimates;
  std::vector<double> ev_thresholds = default_recall_thresholds();
  auto* ev = app.add_subcommand("eval", "recall table and ATE against the ground truth");
  ev->add_option("--data", ev_data, "data directory (frames and truth)")->required();
  ev->add_option("--estimate", ev_estimates, "name=trajectory (repeatable)")->required();
  ev->add_option("--thresholds", ev_thresholds, "recall thresholds in metres");
  ev->add_option("--csv-out", ev_csv, "CSV table");
  ev->add_option("--text-out", ev_text, "aligned text table");

  // pipeline
  ConfigArgs pipe_cfg;
  std::string pipe_out;
  auto* pi = app.add_subcommand("pipeline", "simulate and run every stage; write a report");
  add_config_options(pi, pipe_cfg);
  pi->add_option("--out", pipe_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_json_error("UsageError", e.what());
    return 2;
  }

  try {
    if (*sim) {
      const io::Config c = load_config(sim_cfg);
      write_scenario(generate(c.resolved().scenario), c, sim_out);
    } else if (*loc) {
      const io::Config c = load_config(loc_cfg, loc_data).resolved();
      stage_localize(load_inputs(loc_data), c, loc_out, loc_merged, nullptr);
    } else if (*fu) {
      const io::Config c = load_config(fuse_cfg, fuse_data).resolved();
      const Inputs in = load_inputs(fuse_data);
      stage_fuse(in, c, load_candidates(fuse_cands, in), fuse_sel, fuse_traj, nullptr);
    } else if (*re) {
      io::Config c = load_config(ref_cfg, ref_data);
      if (!ref_variant.empty()) io::set_config_value(c, "refine.variant", ref_variant);
      c = c.resolved();
      const Inputs in = load_inputs(ref_data);
      const auto cands = load_candidates(ref_cands, in);
      const Selection sel = io::read_selection(read(ref_sel), ref_sel, cands);
      stage_refine(in, c, cands, sel, ref_out, nullptr);
    } else if (*po) {
      const io::Config c = load_config(pol_cfg, pol_data).resolved();
      const Inputs in = load_inputs(pol_data);
      const std::string text = read(pol_traj);
      RoundResult first;
      first.round = io::read_round(text);
      if (first.round == 0) first.round = 1;  // untagged trajectories count as first-round
      const Trajectory t = io::read_trajectory(text, pol_traj, in.frame_table);
      if (t.size() != in.frames.size())
        throw Error(ErrorCode::kInvalidInput, pol_traj + ": refined trajectory must cover every frame");
      for (const TrajectoryEntry& e : t) first.refined.poses.push_back(e.pose);
      stage_polish(in, c, first, pol_cands, pol_sel, pol_out, nullptr);
    } else if (*ev) {
      const DataLayout d{ev_data};
      const auto frames = io::read_frames(read(d.frames()), d.frames().string());
      const Trajectory truth = io::read_trajectory(read(d.truth()), d.truth().string(), frames);
      RecallColumns columns;
      std::string ate;
      for (const std::string& spec : ev_estimates) {
        const std::size_t eq = spec.find('=');
        if (eq == std::string::npos)
          throw Error(ErrorCode::kInvalidInput, "--estimate expects name=path, got '" + spec + "'");
        const std::string name = spec.substr(0, eq), path = spec.substr(eq + 1);
        const Trajectory est = io::read_trajectory(read(path), path, frames);
        columns.emplace_back(name, recall_table(est, truth, ev_thresholds));
        ate += name + "," + io::format_double(ate_rmse(est, truth)) + "\n";
      }
      const std::string text = format_recall_text(columns);
      std::cout << text;
      if (!ev_csv.empty())
        io::write_text(ev_csv, format_recall_csv(columns) + "\nmethod,ate_rmse_m\n" + ate);
      if (!ev_text.empty()) io::write_text(ev_text, text);
    } else if (*pi) {
      const io::Config raw = load_config(pipe_cfg);
      const io::Config c = raw.resolved();
      const fs::path out = pipe_out;
      std::vector<StageTiming> timings;

      auto start = std::chrono::steady_clock::now();
      const Scenario sc = generate(c.scenario);
      timings.push_back({"simulate", elapsed_ms(start), sc.frames.size()});
      write_scenario(sc, raw, out / "data");
      const Inputs in = load_inputs(out / "data");

      std::vector<CandidateSet> cands;
      timings.push_back(
          stage_localize(in, c, out / "candidates.txt", out / "merged.txt", &cands));
      Selection sel;
      timings.push_back(
          stage_fuse(in, c, cands, out / "selection.txt", out / "consensus.txt", &sel));

      io::Config pgo_cfg = raw;
      pgo_cfg.variant = RefineVariant::kPgo;
      pgo_cfg = pgo_cfg.resolved();
      RoundResult pgo;
      timings.push_back(stage_refine(in, pgo_cfg, cands, sel,
                                     {out / "pgo.txt", out / "pgo_weights.txt", out / "pgo_log.csv"},
                                     &pgo));
      RoundResult first;
      timings.push_back(stage_refine(
          in, c, cands, sel, {out / "refined.txt", out / "weights.txt", out / "log.csv"}, &first));
      RoundResult second;
      timings.push_back(stage_polish(
          in, c, first, out / "polish_candidates.txt", out / "polish_selection.txt",
          {out / "polished.txt", out / "polish_weights.txt", out / "polish_log.csv"}, &second));

      const Trajectory truth = truth_trajectory(sc);
      const std::string refined_name = to_string(c.variant);
      const std::vector<std::pair<std::string, Trajectory>> methods{
          {"merged", localize_merged_all(in.frames, in.camera, c.pipeline.localization)},
          {"consensus", selected_trajectory(in.frames, cands, sel)},
          {"PGO", to_trajectory(in.frames, pgo.refined.poses)},
          {refined_name, to_trajectory(in.frames, first.refined.poses)},
          {refined_name + "+polish", to_trajectory(in.frames, second.refined.poses)},
      };
      RecallColumns columns;
      std::vector<std::pair<std::string, double>> ate;
      for (const auto& [name, est] : methods) {
        if (name == "PGO" && c.variant == RefineVariant::kPgo) continue;
        columns.emplace_back(name, recall_table(est, truth));
        ate.emplace_back(name, ate_rmse(est, truth));
      }
      write_report(raw, columns, ate, out / "report.csv", out / "report.txt");
      const auto rows = timing_report(timings);
      io::write_text(out / "timing.csv", format_timing_csv(rows));
      io::write_text(out / "timing.txt", format_timing_text(rows));
      std::cout << io::read_text(out / "report.txt") << "\n" << format_timing_text(rows);
    }
  } catch (const ParseError& e) {
    print_json_error(to_string(e.code()), e.what(), e.file(), e.line());
    return 1;
  } catch (const Error& e) {
    print_json_error(to_string(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_json_error("InternalError", e.what());
    return 1;
  }
  return 0;
}
