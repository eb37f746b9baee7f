#include "msloc/pipeline.h"

#include <map>
#include <string>
#include <unordered_map>
#include <utility>

#include "msloc/error.h"

namespace msloc {

std::vector<CandidateSet> localize_all(std::span<const QueryFrame> frames,
                                       const CameraIntrinsics& camera,
                                       const LocalizationOptions& options) {
  std::vector<CandidateSet> out;
  out.reserve(frames.size());
  for (const QueryFrame& f : frames)
    out.push_back(localize_frame(f.frame_id, f.matches, camera, options));
  return out;
}

Trajectory localize_merged_all(std::span<const QueryFrame> frames,
                               const CameraIntrinsics& camera,
                               const LocalizationOptions& options) {
  Trajectory out;
  for (const QueryFrame& f : frames) {
    if (auto c = localize_merged(f.frame_id, f.matches, camera, options))
      out.push_back({f.frame_id, f.timestamp, c->pose});
  }
  return out;
}

Selection fuse(std::span<const CandidateSet> candidates,
               std::span<const MatchSet2D2D> tracks, const CameraIntrinsics& camera,
               const ConsensusOptions& options) {
  return solve_dp(build_chain(candidates, tracks, camera, options));
}

Trajectory selected_trajectory(std::span<const QueryFrame> frames,
                               std::span<const CandidateSet> candidates,
                               const Selection& selection) {
  if (frames.size() != candidates.size())
    throw Error(ErrorCode::kInvalidInput, "one candidate set per frame required");
  const std::vector<std::optional<Pose>> poses = selected_poses(candidates, selection);
  Trajectory out;
  for (std::size_t k = 0; k < frames.size(); ++k)
    if (poses[k]) out.push_back({frames[k].frame_id, frames[k].timestamp, *poses[k]});
  return out;
}

RefinementProblem make_problem(std::span<const QueryFrame> frames,
                               std::span<const CandidateSet> candidates,
                               const Selection& selection,
                               std::span<const OdometryEdge> odometry,
                               std::span<const MatchSet2D2D> tracks,
                               const CameraIntrinsics& camera, int skip_stride) {
  if (frames.size() != candidates.size() || selection.choice.size() != frames.size())
    throw Error(ErrorCode::kInvalidInput, "frames, candidates and selection differ in size");
  RefinementProblem p;
  p.camera = camera;
  std::unordered_map<int, std::size_t> index;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    if (candidates[k].frame_id != frames[k].frame_id)
      throw Error(ErrorCode::kInvalidInput, "candidate set out of frame order");
    index.emplace(frames[k].frame_id, k);
    p.frame_ids.push_back(frames[k].frame_id);
    if (selection.choice[k]) {
      const Candidate& c =
          candidates[k].candidates.at(static_cast<std::size_t>(*selection.choice[k]));
      p.priors.emplace_back(PosePrior{c.pose, c.inliers});
    } else {
      p.priors.emplace_back(std::nullopt);
    }
  }

  std::map<std::pair<std::size_t, std::size_t>, const MatchSet2D2D*> track_of;
  for (const MatchSet2D2D& t : tracks) {
    auto a = index.find(t.frame_a), b = index.find(t.frame_b);
    if (a != index.end() && b != index.end()) track_of[{a->second, b->second}] = &t;
  }
  for (const OdometryEdge& e : odometry) {
    auto a = index.find(e.frame_a), b = index.find(e.frame_b);
    if (a == index.end() || b == index.end()) continue;
    if (b->second <= a->second) continue;
    const std::size_t gap = b->second - a->second;
    if (gap != 1 && !(skip_stride > 1 && gap == static_cast<std::size_t>(skip_stride)))
      continue;
    RelativeTerm term{a->second, b->second, e.z, {}};
    if (auto t = track_of.find({a->second, b->second}); t != track_of.end())
      term.matches = t->second->matches;
    p.relatives.push_back(std::move(term));
  }
  std::vector<bool> linked(frames.size(), false);
  for (const RelativeTerm& r : p.relatives)
    if (r.b == r.a + 1) linked[r.a] = true;
  for (std::size_t k = 0; k + 1 < frames.size(); ++k)
    if (!linked[k])
      throw Error(ErrorCode::kInvalidInput,
                  "no odometry between frames " + std::to_string(frames[k].frame_id) + " and " +
                      std::to_string(frames[k + 1].frame_id));
  p.validate();
  return p;
}

Trajectory to_trajectory(std::span<const QueryFrame> frames, std::span<const Pose> poses) {
  if (frames.size() != poses.size())
    throw Error(ErrorCode::kInvalidInput, "one pose per frame required");
  Trajectory out;
  for (std::size_t k = 0; k < frames.size(); ++k)
    out.push_back({frames[k].frame_id, frames[k].timestamp, poses[k]});
  return out;
}

Trajectory truth_trajectory(const Scenario& scenario) {
  return to_trajectory(scenario.frames, scenario.truth.poses);
}

std::vector<Match2D3D> guided_prune(const Pose& x, std::span<const Match2D3D> matches,
                                    const CameraIntrinsics& camera, double threshold_px) {
  std::vector<Match2D3D> out;
  for (const Match2D3D& m : matches) {
    Vector2 px;
    if (!try_project(x, camera, m.world_point, &px)) continue;
    if ((px - m.query_point).norm() <= threshold_px) out.push_back(m);
  }
  return out;
}

std::vector<CandidateSet> repose_candidates(std::span<const QueryFrame> frames,
                                            std::span<const Pose> refined,
                                            const CameraIntrinsics& camera,
                                            const PolishOptions& options) {
  if (frames.size() != refined.size())
    throw Error(ErrorCode::kInvalidInput, "one refined pose per frame required");
  std::vector<CandidateSet> out;
  for (std::size_t k = 0; k < frames.size(); ++k) {
    const QueryFrame& f = frames[k];
    const std::vector<Match2D3D> kept =
        guided_prune(refined[k], f.matches, camera, options.threshold_px);
    std::map<int, std::vector<Match2D3D>> by_session;
    for (const Match2D3D& m : kept) by_session[m.session_id].push_back(m);
    CandidateSet set{f.frame_id, {}};
    for (const auto& [session, matches] : by_session) {
      if (static_cast<int>(matches.size()) < std::max(4, options.min_inliers)) continue;
      RansacOptions ro = options.ransac;
      ro.seed = localization_seed(options.ransac.seed, f.frame_id, session, MatchSource::kSim);
      try {
        PnPResult r = ransac_pnp(matches, camera, ro);
        if (static_cast<int>(r.inliers.size()) < options.min_inliers) continue;
        set.candidates.push_back({session, r.pose, std::move(r.inliers)});
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNoConsensus && e.code() != ErrorCode::kTooFewMatches)
          throw;
      }
    }
    out.push_back(std::move(set));
  }
  return out;
}

ScenarioInputs inputs_of(const Scenario& scenario) {
  return {scenario.frames, scenario.odometry, scenario.tracks, scenario.camera};
}

RoundResult run_round(const ScenarioInputs& in, std::vector<CandidateSet> candidates,
                      const PipelineOptions& options, int round) {
  RoundResult r;
  r.round = round;
  r.candidates = std::move(candidates);
  r.selection = fuse(r.candidates, in.tracks, in.camera, options.consensus);
  r.problem = make_problem(in.frames, r.candidates, r.selection, in.odometry, in.tracks,
                           in.camera, options.skip_stride);
  r.refined = refine(r.problem, options.refine);
  return r;
}

RoundResult polish(const ScenarioInputs& in, const RoundResult& first,
                   const PipelineOptions& options) {
  if (first.round != 1)
    throw Error(ErrorCode::kInvalidInput, "polishing runs once, after the first round");
  return run_round(in, repose_candidates(in.frames, first.refined.poses, in.camera,
                                         options.polish),
                   options, 2);
}

}  // namespace msloc
