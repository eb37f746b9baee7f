#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "msloc/geometry.h"
#include "msloc/matches.h"

namespace msloc {

// Global prior of one frame: the consensus-selected pose and its 2D-3D
// inliers.
struct PosePrior {
  Pose pose;
  std::vector<Match2D3D> matches;
};

// Odometry between frames a and b (indices into the problem's frames) with
// the tracked correspondences between them.
struct RelativeTerm {
  std::size_t a = 0;
  std::size_t b = 0;
  Pose z;  // relative_pose(X_a, X_b)
  std::vector<Match2D2D> matches;
};

struct RefinementProblem {
  std::vector<int> frame_ids;
  std::vector<std::optional<PosePrior>> priors;  // one slot per frame
  std::vector<RelativeTerm> relatives;
  CameraIntrinsics camera;

  std::size_t size() const { return frame_ids.size(); }
  void validate() const;  // throws InvalidInput
};

enum class RefineVariant { kPgo, kPgo2d2d, kPgo2d3d, kPgba };

const char* to_string(RefineVariant variant);
std::optional<RefineVariant> parse_refine_variant(const std::string& name);

struct RefineOptions {
  double lambda1 = 1e-2;
  double lambda2 = 1e-2;
  double u = 0.5;
  double rotation_weight = 1.0;      // metres per radian in the pose error
  double huber_reprojection_px = 3.0;
  double huber_sampson_sq_px = 4.0;
  double weight_tolerance = 1e-3;
  int max_em_iterations = 20;
  // Levenberg-Marquardt iterations per M-step. A few suffice: EM only needs
  // each M-step to decrease the objective, and re-weighting early keeps
  // poses from committing to gross-outlier priors.
  int max_solver_iterations = 5;
  double solver_tolerance = 1e-6;  // relative function and parameter tolerance
  int seed_min_matches = 20;
  // Sampson terms of pairs whose odometry baseline is shorter are dropped.
  double min_sampson_baseline = 0.02;
  bool use_reprojection = true;
  bool use_sampson = true;

  void apply(RefineVariant variant);
  void validate() const;  // throws InvalidConfig
};

// Residuals. The pose error stacks the translation difference over the
// rotation log-map scaled by rotation_weight.
Vector6 residual_pose_prior(const Pose& x, const Pose& prior, double rotation_weight = 1.0);
Vector6 residual_relative(const Pose& xa, const Pose& xb, const Pose& z,
                          double rotation_weight = 1.0);

double huber(double squared, double width_squared);

// Mean Huber-robustified squared reprojection error. Throws EmptyMatchSet.
double reprojection_cost(const Pose& x, std::span<const Match2D3D> matches,
                         const CameraIntrinsics& camera, double huber_px = 3.0);

// Mean Huber-robustified Sampson error. Throws EmptyMatchSet, or
// DegenerateBaseline when the two poses share a centre.
double sampson_cost(const Pose& xa, const Pose& xb, std::span<const Match2D2D> matches,
                    const CameraIntrinsics& camera, double huber_sq_px = 4.0);

struct RefinementState {
  std::vector<Pose> poses;
  std::vector<double> weights;  // 0 for frames without a prior
  int iteration = 0;
};

// Data term ||P - X||^2 (+ lambda1 * pi when the 2D-3D term is enabled).
double prior_data_term(const Pose& x, const PosePrior& prior, const CameraIntrinsics& camera,
                       const RefineOptions& options);

// Closed-form weight update U^2 / (U^2 + data term).
double weight_update(double data_term, double u);

void e_step(RefinementState& state, const RefinementProblem& problem,
            const RefineOptions& options);

// Weighted objective plus the weight regularizer -U^2 (log w - w).
double objective(const RefinementState& state, const RefinementProblem& problem,
                 const RefineOptions& options);

struct MStepReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  std::vector<double> accepted_costs;  // solver cost after each accepted step
  int iterations = 0;
  int dropped_sampson_terms = 0;
  bool converged = false;  // stopped on a tolerance, not the iteration cap
};

// Weighted nonlinear least squares over all poses with weights fixed, for at
// most max_solver_iterations iterations.
// Throws SolverDiverged.
MStepReport m_step(RefinementState& state, const RefinementProblem& problem,
                   const RefineOptions& options);

// Seeds (frames whose prior has at least min_matches matches) take their
// prior; every other frame chains odometry from the nearest seed, ties to the
// earlier one. Throws NoSeeds.
std::vector<Pose> initialize_seeds(const RefinementProblem& problem, int min_matches);

struct IterationRecord {
  int iteration = 0;
  std::string step;  // "init", "E" or "M"
  double objective = 0.0;
  double max_weight_change = 0.0;
  double runtime_ms = 0.0;
};

struct RefineResult {
  std::vector<Pose> poses;
  std::vector<double> weights;
  std::vector<IterationRecord> log;
  std::vector<MStepReport> m_steps;
  int em_iterations = 0;
  bool converged = false;
};

RefineResult refine(const RefinementProblem& problem, const RefineOptions& options);

}  // namespace msloc
