#include "msloc/pose_refine.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>

#include <ceres/ceres.h>

#include "msloc/error.h"
#include "msloc/refine_costs.h"

namespace msloc {

void RefinementProblem::validate() const {
  if (priors.size() != frame_ids.size()) {
    throw Error(ErrorCode::kInvalidInput, "one prior slot per frame required");
  }
  for (const auto& r : relatives) {
    if (r.a >= size() || r.b >= size() || r.a == r.b) {
      throw Error(ErrorCode::kInvalidInput, "relative term references a missing frame");
    }
  }
  camera.validate();
}

const char* to_string(RefineVariant variant) {
  switch (variant) {
    case RefineVariant::kPgo: return "PGO";
    case RefineVariant::kPgo2d2d: return "PGO_2D2D";
    case RefineVariant::kPgo2d3d: return "PGO_2D3D";
    case RefineVariant::kPgba: return "PGBA";
  }
  return "?";
}

std::optional<RefineVariant> parse_refine_variant(const std::string& name) {
  for (RefineVariant v : {RefineVariant::kPgo, RefineVariant::kPgo2d2d,
                          RefineVariant::kPgo2d3d, RefineVariant::kPgba}) {
    if (name == to_string(v)) return v;
  }
  return std::nullopt;
}

void RefineOptions::apply(RefineVariant variant) {
  use_reprojection = variant == RefineVariant::kPgo2d3d || variant == RefineVariant::kPgba;
  use_sampson = variant == RefineVariant::kPgo2d2d || variant == RefineVariant::kPgba;
}

void RefineOptions::validate() const {
  if (!(lambda1 > 0.0) || !(lambda2 > 0.0) || !(u > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "lambda1, lambda2 and U must be positive");
  }
  if (!(rotation_weight >= 0.0) || !(huber_reprojection_px > 0.0) ||
      !(huber_sampson_sq_px > 0.0) || !(weight_tolerance > 0.0) || max_em_iterations < 1 ||
      max_solver_iterations < 1 || !(solver_tolerance > 0.0) ||
      seed_min_matches < 0) {
    throw Error(ErrorCode::kInvalidConfig, "invalid refinement options");
  }
}

double huber(double squared, double width_squared) {
  if (squared <= width_squared) return squared;
  return 2.0 * std::sqrt(width_squared * squared) - width_squared;
}

namespace {

// rho(s) = 2 * scale * weight * s, so the solver's 1/2 sum rho equals the
// weighted objective. The weight is read through a pointer so the E-step can
// update it without rebuilding the problem. Robust kernels live inside the
// residuals.
class ScaledLoss : public ceres::LossFunction {
 public:
  explicit ScaledLoss(double scale, const double* weight = nullptr)
      : scale_(scale), weight_(weight) {}

  void Evaluate(double s, double rho[3]) const override {
    const double c = 2.0 * scale_ * (weight_ != nullptr ? *weight_ : 1.0);
    rho[0] = c * s;
    rho[1] = c;
    rho[2] = 0.0;
  }

 private:
  double scale_;
  const double* weight_;
};

template <typename Functor>
Eigen::VectorXd eval2(const Functor& f, int n, const Pose& x) {
  double q[4], t[3];
  costs::pose_blocks(x, q, t);
  Eigen::VectorXd r(n);
  f(q, t, r.data());
  return r;
}

template <typename Functor>
Eigen::VectorXd eval4(const Functor& f, int n, const Pose& a, const Pose& b) {
  double qa[4], ta[3], qb[4], tb[3];
  costs::pose_blocks(a, qa, ta);
  costs::pose_blocks(b, qb, tb);
  Eigen::VectorXd r(n);
  f(qa, ta, qb, tb, r.data());
  return r;
}

costs::ReprojectionResidual reprojection_functor(std::span<const Match2D3D> matches,
                                                 const CameraIntrinsics& camera,
                                                 double huber_px) {
  costs::ReprojectionResidual f{{}, {}, camera, huber_px};
  for (const auto& m : matches) {
    f.pixels.push_back(m.query_point);
    f.points.push_back(m.world_point);
  }
  return f;
}

costs::SampsonResidual sampson_functor(std::span<const Match2D2D> matches,
                                       const CameraIntrinsics& camera, double huber_sq_px) {
  costs::SampsonResidual f{{}, {}, camera, huber_sq_px};
  for (const auto& m : matches) {
    f.a.push_back(m.a);
    f.b.push_back(m.b);
  }
  return f;
}

double sampson_sum(const Pose& xa, const Pose& xb, std::span<const Match2D2D> matches,
                   const CameraIntrinsics& camera, double huber_sq_px) {
  const auto f = sampson_functor(matches, camera, huber_sq_px);
  return eval4(f, f.size(), xa, xb).squaredNorm();
}

bool sampson_enabled(const RelativeTerm& r, const RefineOptions& options) {
  return options.use_sampson && !r.matches.empty() &&
         r.z.translation.norm() >= options.min_sampson_baseline;
}

bool reprojection_enabled(const PosePrior& p, const RefineOptions& options) {
  return options.use_reprojection && !p.matches.empty();
}

}  // namespace

Vector6 residual_pose_prior(const Pose& x, const Pose& prior, double rotation_weight) {
  return eval2(costs::PriorResidual{prior, rotation_weight}, 6, x);
}

Vector6 residual_relative(const Pose& xa, const Pose& xb, const Pose& z,
                          double rotation_weight) {
  return eval4(costs::RelativeResidual{z, rotation_weight}, 6, xa, xb);
}

double reprojection_cost(const Pose& x, std::span<const Match2D3D> matches,
                         const CameraIntrinsics& camera, double huber_px) {
  if (matches.empty()) throw Error(ErrorCode::kEmptyMatchSet, "no 2D-3D matches");
  const auto f = reprojection_functor(matches, camera, huber_px);
  return eval2(f, f.size(), x).squaredNorm() / static_cast<double>(matches.size());
}

double sampson_cost(const Pose& xa, const Pose& xb, std::span<const Match2D2D> matches,
                    const CameraIntrinsics& camera, double huber_sq_px) {
  if (matches.empty()) throw Error(ErrorCode::kEmptyMatchSet, "no 2D-2D matches");
  if ((xa.translation - xb.translation).norm() <= kMinBaseline) {
    throw Error(ErrorCode::kDegenerateBaseline, "poses share a centre");
  }
  return sampson_sum(xa, xb, matches, camera, huber_sq_px) /
         static_cast<double>(matches.size());
}

double prior_data_term(const Pose& x, const PosePrior& prior, const CameraIntrinsics& camera,
                       const RefineOptions& options) {
  double d = residual_pose_prior(x, prior.pose, options.rotation_weight).squaredNorm();
  if (reprojection_enabled(prior, options)) {
    d += options.lambda1 *
         reprojection_cost(x, prior.matches, camera, options.huber_reprojection_px);
  }
  return d;
}

double weight_update(double data_term, double u) {
  return (u * u) / (u * u + data_term);
}

void e_step(RefinementState& state, const RefinementProblem& problem,
            const RefineOptions& options) {
  state.weights.resize(problem.size(), 0.0);
  for (std::size_t k = 0; k < problem.size(); ++k) {
    const auto& prior = problem.priors[k];
    state.weights[k] =
        prior ? weight_update(prior_data_term(state.poses[k], *prior, problem.camera, options),
                              options.u)
              : 0.0;
  }
}

double objective(const RefinementState& state, const RefinementProblem& problem,
                 const RefineOptions& options) {
  const double u2 = options.u * options.u;
  double j = 0.0;
  for (std::size_t k = 0; k < problem.size(); ++k) {
    const auto& prior = problem.priors[k];
    if (!prior) continue;
    const double w = state.weights[k];
    j += w * prior_data_term(state.poses[k], *prior, problem.camera, options) -
         u2 * (std::log(w) - w);
  }
  for (const auto& r : problem.relatives) {
    const Pose& xa = state.poses[r.a];
    const Pose& xb = state.poses[r.b];
    j += residual_relative(xa, xb, r.z, options.rotation_weight).squaredNorm();
    if (sampson_enabled(r, options)) {
      j += options.lambda2 *
           sampson_sum(xa, xb, r.matches, problem.camera, options.huber_sampson_sq_px) /
           static_cast<double>(r.matches.size());
    }
  }
  return j;
}

namespace {

// Least-squares problem of the M-step. Built once per refine run; the
// weights are read through pointers at every evaluation.
class PoseSolver {
 public:
  PoseSolver(const RefinementProblem& problem, const RefineOptions& options,
             const std::vector<double>& weights)
      : options_(options), q_(4 * problem.size()), t_(3 * problem.size()) {
    ceres::Problem::Options po;
    po.loss_function_ownership = ceres::DO_NOT_TAKE_OWNERSHIP;
    problem_ = std::make_unique<ceres::Problem>(po);
    for (std::size_t k = 0; k < problem.size(); ++k) {
      problem_->AddParameterBlock(q(k), 4, new ceres::EigenQuaternionParameterization);
      problem_->AddParameterBlock(t(k), 3);
    }
    for (std::size_t k = 0; k < problem.size(); ++k) {
      const auto& prior = problem.priors[k];
      if (!prior) continue;
      const double* w = &weights[k];
      problem_->AddResidualBlock(
          new ceres::AutoDiffCostFunction<costs::PriorResidual, 6, 4, 3>(
              new costs::PriorResidual{prior->pose, options.rotation_weight}),
          own(new ScaledLoss(1.0, w)), q(k), t(k));
      if (!reprojection_enabled(*prior, options)) continue;
      auto* f = new costs::ReprojectionResidual(
          reprojection_functor(prior->matches, problem.camera, options.huber_reprojection_px));
      const int n = f->size();
      problem_->AddResidualBlock(
          new ceres::AutoDiffCostFunction<costs::ReprojectionResidual, ceres::DYNAMIC, 4, 3>(f, n),
          own(new ScaledLoss(options.lambda1 / static_cast<double>(prior->matches.size()), w)),
          q(k), t(k));
    }
    auto* relative_loss = own(new ScaledLoss(1.0));
    for (const auto& r : problem.relatives) {
      problem_->AddResidualBlock(
          new ceres::AutoDiffCostFunction<costs::RelativeResidual, 6, 4, 3, 4, 3>(
              new costs::RelativeResidual{r.z, options.rotation_weight}),
          relative_loss, q(r.a), t(r.a), q(r.b), t(r.b));
      if (!sampson_enabled(r, options)) {
        if (options.use_sampson && !r.matches.empty()) ++dropped_sampson_;
        continue;
      }
      auto* f = new costs::SampsonResidual(
          sampson_functor(r.matches, problem.camera, options.huber_sampson_sq_px));
      const int n = f->size();
      problem_->AddResidualBlock(
          new ceres::AutoDiffCostFunction<costs::SampsonResidual, ceres::DYNAMIC, 4, 3, 4, 3>(f, n),
          own(new ScaledLoss(options.lambda2 / static_cast<double>(r.matches.size()))),
          q(r.a), t(r.a), q(r.b), t(r.b));
    }
  }

  MStepReport solve(std::vector<Pose>& poses) {
    for (std::size_t k = 0; k < poses.size(); ++k) costs::pose_blocks(poses[k], q(k), t(k));

    ceres::Solver::Options so;
    so.minimizer_type = ceres::TRUST_REGION;
    so.trust_region_strategy_type = ceres::LEVENBERG_MARQUARDT;
    so.linear_solver_type = ceres::SPARSE_NORMAL_CHOLESKY;
    so.max_num_iterations = options_.max_solver_iterations;
    so.function_tolerance = options_.solver_tolerance;
    so.parameter_tolerance = options_.solver_tolerance;
    so.num_threads = 1;
    so.initial_trust_region_radius = radius_;
    so.logging_type = ceres::SILENT;
    so.minimizer_progress_to_stdout = false;
    ceres::Solver::Summary summary;
    ceres::Solve(so, problem_.get(), &summary);

    if (summary.termination_type == ceres::FAILURE || !std::isfinite(summary.final_cost)) {
      throw Error(ErrorCode::kSolverDiverged, summary.message);
    }
    MStepReport report;
    report.initial_cost = summary.initial_cost;
    report.final_cost = summary.final_cost;
    report.iterations = static_cast<int>(summary.iterations.size());
    report.dropped_sampson_terms = dropped_sampson_;
    report.converged = summary.termination_type == ceres::CONVERGENCE;
    for (const auto& it : summary.iterations) {
      if (it.step_is_successful) report.accepted_costs.push_back(it.cost);
    }
    if (!summary.iterations.empty()) {
      radius_ = std::clamp(summary.iterations.back().trust_region_radius, kMinRadius, kMaxRadius);
    }
    for (std::size_t k = 0; k < poses.size(); ++k) {
      Eigen::Quaterniond rotation(Eigen::Map<const Eigen::Vector4d>(q(k)));
      poses[k] = Pose(rotation.normalized(), Eigen::Map<const Eigen::Vector3d>(t(k)));
    }
    return report;
  }

 private:
  double* q(std::size_t k) { return &q_[4 * k]; }
  double* t(std::size_t k) { return &t_[3 * k]; }
  ScaledLoss* own(ScaledLoss* loss) {
    losses_.emplace_back(loss);
    return loss;
  }

  RefineOptions options_;
  std::vector<double> q_;
  std::vector<double> t_;
  std::vector<std::unique_ptr<ScaledLoss>> losses_;
  std::unique_ptr<ceres::Problem> problem_;
  int dropped_sampson_ = 0;
  // The trust region carries over between M-steps: with a few solver
  // iterations per step, restarting from a large radius can spend them all
  // on rejected steps.
  static constexpr double kMinRadius = 1e-8;
  static constexpr double kMaxRadius = 1e4;
  double radius_ = kMaxRadius;
};

double max_abs_change(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

MStepReport m_step(RefinementState& state, const RefinementProblem& problem,
                   const RefineOptions& options) {
  if (state.poses.size() != problem.size() || state.weights.size() != problem.size()) {
    throw Error(ErrorCode::kInvalidInput, "state does not match the problem");
  }
  PoseSolver solver(problem, options, state.weights);
  return solver.solve(state.poses);
}

std::vector<Pose> initialize_seeds(const RefinementProblem& problem, int min_matches) {
  const std::size_t n = problem.size();
  std::vector<bool> seed(n, false);
  bool any = false;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& p = problem.priors[k];
    seed[k] = p && static_cast<int>(p->matches.size()) >= min_matches;
    any = any || seed[k];
  }
  if (!any) throw Error(ErrorCode::kNoSeeds, "no frame has enough 2D-3D matches");

  std::vector<const Pose*> odometry(n, nullptr);  // odometry[k]: k -> k+1
  for (const auto& r : problem.relatives) {
    if (r.b == r.a + 1 && odometry[r.a] == nullptr) odometry[r.a] = &r.z;
  }
  auto step = [&](std::size_t k) -> const Pose& {
    if (odometry[k] == nullptr) {
      throw Error(ErrorCode::kInvalidInput,
                  "missing odometry after frame " + std::to_string(problem.frame_ids[k]));
    }
    return *odometry[k];
  };

  // Nearest seed to the left and right of every frame.
  std::vector<std::optional<std::size_t>> left(n), right(n);
  for (std::size_t k = 0; k < n; ++k) {
    left[k] = seed[k] ? std::optional(k) : (k > 0 ? left[k - 1] : std::nullopt);
  }
  for (std::size_t k = n; k-- > 0;) {
    right[k] = seed[k] ? std::optional(k) : (k + 1 < n ? right[k + 1] : std::nullopt);
  }

  std::vector<Pose> x(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (seed[k]) {
      x[k] = problem.priors[k]->pose;
      continue;
    }
    const bool use_left =
        left[k] && (!right[k] || k - *left[k] <= *right[k] - k);
    if (use_left) {
      Pose p = problem.priors[*left[k]]->pose;
      for (std::size_t j = *left[k]; j < k; ++j) p = compose(p, step(j));
      x[k] = p;
    } else {
      Pose p = problem.priors[*right[k]]->pose;
      for (std::size_t j = *right[k]; j > k; --j) p = compose(p, inverse(step(j - 1)));
      x[k] = p;
    }
  }
  return x;
}

RefineResult refine(const RefinementProblem& problem, const RefineOptions& options) {
  problem.validate();
  options.validate();
  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
        .count();
  };

  RefinementState state;
  state.poses = initialize_seeds(problem, options.seed_min_matches);
  e_step(state, problem, options);

  RefineResult result;
  result.log.push_back({0, "E", objective(state, problem, options), 0.0, elapsed_ms()});

  PoseSolver solver(problem, options, state.weights);
  for (int it = 1; it <= options.max_em_iterations; ++it) {
    state.iteration = it;
    result.m_steps.push_back(solver.solve(state.poses));
    result.log.push_back({it, "M", objective(state, problem, options), 0.0, elapsed_ms()});

    const std::vector<double> previous = state.weights;
    e_step(state, problem, options);
    const double dw = max_abs_change(previous, state.weights);
    result.log.push_back({it, "E", objective(state, problem, options), dw, elapsed_ms()});
    result.em_iterations = it;
    // A capped M-step moves the poses only part of the way, so a small weight
    // change alone does not mean the poses have settled.
    if (dw < options.weight_tolerance && result.m_steps.back().converged) {
      result.converged = true;
      break;
    }
  }
  result.poses = state.poses;
  result.weights = state.weights;
  return result;
}

}  // namespace msloc
