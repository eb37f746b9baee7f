#include "msloc/localization.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "msloc/error.h"
#include "msloc/random.h"

namespace msloc {
namespace {

// Polynomials are stored lowest degree first.
using Poly = std::array<double, 5>;

Poly poly_mul(std::span<const double> a, std::span<const double> b) {
  Poly out{};
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < b.size(); ++j) {
      if (i + j < out.size()) out[i + j] += a[i] * b[j];
    }
  }
  return out;
}

// Largest real root of m^3 + a m^2 + b m + c.
double largest_cubic_root(double a, double b, double c) {
  const double q = (a * a - 3.0 * b) / 9.0;
  const double r = (2.0 * a * a * a - 9.0 * a * b + 27.0 * c) / 54.0;
  double m;
  if (r * r < q * q * q) {
    const double theta = std::acos(std::clamp(r / std::sqrt(q * q * q), -1.0, 1.0));
    m = -2.0 * std::sqrt(q) * std::cos((theta + 2.0 * std::numbers::pi) / 3.0) - a / 3.0;
  } else {
    const double A = -std::copysign(std::cbrt(std::abs(r) + std::sqrt(r * r - q * q * q)), r);
    m = A + (A != 0.0 ? q / A : 0.0) - a / 3.0;
  }
  for (int it = 0; it < 2; ++it) {
    const double f = ((m + a) * m + b) * m + c;
    const double df = (3.0 * m + 2.0 * a) * m + b;
    if (df == 0.0) break;
    m -= f / df;
  }
  return m;
}

// Real roots of x^2 + b x + c; a slightly negative discriminant counts as a
// double root so tangent roots survive rounding.
void quadratic_roots(double b, double c, double tolerance, std::vector<double>& out) {
  double disc = b * b - 4.0 * c;
  if (disc < -tolerance) return;
  disc = std::sqrt(std::max(disc, 0.0));
  out.push_back(0.5 * (-b + disc));
  out.push_back(0.5 * (-b - disc));
}

// Ferrari: depress x = y - B/4, split y^4 + p y^2 + q y + r into two
// quadratics through a root of the resolvent cubic.
std::vector<double> quartic_roots(const Poly& poly) {
  const double B = poly[3] / poly[4], C = poly[2] / poly[4], D = poly[1] / poly[4],
               E = poly[0] / poly[4];
  const double B2 = B * B;
  const double p = C - 3.0 * B2 / 8.0;
  const double q = D - B * C / 2.0 + B2 * B / 8.0;
  const double r = E - B * D / 4.0 + B2 * C / 16.0 - 3.0 * B2 * B2 / 256.0;
  const double tolerance = 1e-10 * (1.0 + std::abs(p) + std::sqrt(std::abs(r)));
  std::vector<double> y;
  if (std::abs(q) < 1e-14 * (1.0 + std::abs(p) + std::abs(r))) {
    std::vector<double> z;
    quadratic_roots(p, r, tolerance, z);
    for (double zi : z) {
      if (zi < -tolerance) continue;
      y.push_back(std::sqrt(std::max(zi, 0.0)));
      y.push_back(-y.back());
    }
  } else {
    // 8 m^3 + 8 p m^2 + (2 p^2 - 8 r) m - q^2 = 0 has a positive root.
    const double m = largest_cubic_root(p, p * p / 4.0 - r, -q * q / 8.0);
    if (m > 0.0) {
      const double sq = std::sqrt(2.0 * m);
      quadratic_roots(-sq, p / 2.0 + m + q / (2.0 * sq), tolerance, y);
      quadratic_roots(sq, p / 2.0 + m - q / (2.0 * sq), tolerance, y);
    }
  }
  for (double& v : y) v -= B / 4.0;
  return y;
}

std::vector<double> companion_roots(const Poly& p, int degree) {
  using Companion = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, 4, 4>;
  Companion companion = Companion::Zero(degree, degree);
  const double lead = p[static_cast<std::size_t>(degree)];
  for (int i = 0; i < degree; ++i) {
    companion(0, i) = -p[static_cast<std::size_t>(degree - 1 - i)] / lead;
  }
  for (int i = 1; i < degree; ++i) companion(i, i - 1) = 1.0;
  const Eigen::EigenSolver<Companion> solver(companion, false);
  std::vector<double> roots;
  for (const auto& ev : solver.eigenvalues()) {
    if (std::abs(ev.imag()) > 1e-6 * (1.0 + std::abs(ev.real()))) continue;
    roots.push_back(ev.real());
  }
  return roots;
}

std::vector<double> real_roots(const Poly& p) {
  int degree = 4;
  const double scale = std::max({std::abs(p[0]), std::abs(p[1]), std::abs(p[2]),
                                 std::abs(p[3]), std::abs(p[4])});
  if (scale == 0.0) return {};
  while (degree > 0 && std::abs(p[static_cast<std::size_t>(degree)]) < 1e-14 * scale) {
    --degree;
  }
  if (degree == 0) return {};
  std::vector<double> roots = degree == 4 ? quartic_roots(p) : companion_roots(p, degree);
  // Newton polish.
  for (double& x : roots) {
    for (int it = 0; it < 3; ++it) {
      double f = 0.0;
      double df = 0.0;
      for (int k = degree; k >= 0; --k) {
        df = df * x + f;
        f = f * x + p[static_cast<std::size_t>(k)];
      }
      if (df == 0.0) break;
      x -= f / df;
    }
  }
  return roots;
}

bool inlier(const Pose& pose, const CameraIntrinsics& camera,
            const Match2D3D& m, double threshold_sq) {
  Vector2 pixel;
  if (!try_project(pose, camera, m.world_point, &pixel)) return false;
  return (pixel - m.query_point).squaredNorm() <= threshold_sq;
}

// Same test as inlier() for every match, with the rotation matrix formed
// once and the threshold compared without dividing by depth.
std::size_t count_inliers(const Pose& pose, std::span<const Match2D3D> matches,
                          const CameraIntrinsics& camera, double threshold_sq) {
  const Matrix3 Rt = pose.rotation.toRotationMatrix().transpose();
  const Vector3 t = Rt * pose.translation;
  std::size_t count = 0;
  for (const Match2D3D& m : matches) {
    const Vector3 pc = Rt * m.world_point - t;
    if (!(pc.z() > 0.0)) continue;
    const double ex = camera.fx * pc.x() + (camera.cx - m.query_point.x()) * pc.z();
    const double ey = camera.fy * pc.y() + (camera.cy - m.query_point.y()) * pc.z();
    count += ex * ex + ey * ey <= threshold_sq * pc.z() * pc.z();
  }
  return count;
}

std::vector<std::size_t> collect_inliers(const Pose& pose,
                                         std::span<const Match2D3D> matches,
                                         const CameraIntrinsics& camera,
                                         double threshold_sq) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (inlier(pose, camera, matches[i], threshold_sq)) out.push_back(i);
  }
  return out;
}

double pose_cost(const Pose& pose, std::span<const Match2D3D> matches,
                 const CameraIntrinsics& camera) {
  double sum = 0.0;
  for (const auto& m : matches) {
    Vector2 pixel;
    if (!try_project(pose, camera, m.world_point, &pixel)) {
      return std::numeric_limits<double>::infinity();
    }
    sum += (pixel - m.query_point).squaredNorm();
  }
  return sum;
}

std::optional<Candidate> localize_grouped(int frame_id, int session_id,
                                          std::span<const Match2D3D> matches,
                                          const CameraIntrinsics& camera,
                                          const LocalizationOptions& options) {
  std::map<MatchSource, std::vector<Match2D3D>> by_source;
  for (const auto& m : matches) by_source[m.source].push_back(m);

  struct SourceResult {
    MatchSource source;
    PnPResult result;
  };
  std::vector<SourceResult> results;
  for (const auto& [source, group] : by_source) {
    if (group.size() < 4) continue;
    RansacOptions ro = options.ransac;
    ro.seed = localization_seed(options.ransac.seed, frame_id, session_id, source);
    try {
      results.push_back({source, ransac_pnp(group, camera, ro)});
    } catch (const Error&) {
    }
  }
  if (results.empty()) return std::nullopt;

  PnPResult final_result;
  if (results.size() == 1) {
    final_result = std::move(results.front().result);
  } else {
    std::vector<Match2D3D> combined;
    const SourceResult* best = &results.front();
    for (const auto& r : results) {
      combined.insert(combined.end(), r.result.inliers.begin(), r.result.inliers.end());
      if (r.result.inliers.size() > best->result.inliers.size()) best = &r;
    }
    combined = dedupe_matches(combined, best->result.pose, camera,
                              options.dedupe_radius_px);
    RansacOptions ro = options.ransac;
    ro.seed = derive_seed(options.ransac.seed, static_cast<std::uint64_t>(frame_id),
                          static_cast<std::uint64_t>(session_id), 0xC0FFEEULL);
    try {
      final_result = ransac_pnp(combined, camera, ro);
    } catch (const Error&) {
      return std::nullopt;
    }
  }
  if (static_cast<int>(final_result.inliers.size()) < options.min_inliers) {
    return std::nullopt;
  }
  return Candidate{session_id, final_result.pose, std::move(final_result.inliers)};
}

}  // namespace

std::uint64_t localization_seed(std::uint64_t base, int frame_id, int session_id,
                                MatchSource source) {
  return derive_seed(base, static_cast<std::uint64_t>(frame_id),
                     static_cast<std::uint64_t>(session_id),
                     static_cast<std::uint64_t>(source) + 1);
}

const Candidate* CandidateSet::find_session(int session_id) const {
  for (const auto& c : candidates) {
    if (c.session_id == session_id) return &c;
  }
  return nullptr;
}

std::vector<Pose> solve_p3p(std::span<const Vector3, 3> bearings,
                            std::span<const Vector3, 3> world_points) {
  std::vector<Pose> solutions;
  const Vector3& p1 = world_points[0];
  const Vector3& p2 = world_points[1];
  const Vector3& p3 = world_points[2];
  const double a2 = (p2 - p3).squaredNorm();
  const double b2 = (p1 - p3).squaredNorm();
  const double c2 = (p1 - p2).squaredNorm();
  if (a2 < 1e-20 || b2 < 1e-20 || c2 < 1e-20) return solutions;
  const Vector3 j1 = bearings[0].normalized();
  const Vector3 j2 = bearings[1].normalized();
  const Vector3 j3 = bearings[2].normalized();
  const double ca = j2.dot(j3);
  const double cb = j1.dot(j3);
  const double cg = j1.dot(j2);

  // With s2 = u s1 and s3 = v s1 the law of cosines gives
  //   u^2 + v^2 - 2uv ca = (a2/b2)(1 + v^2 - 2v cb)
  //   1 + u^2 - 2u cg    = (c2/b2)(1 + v^2 - 2v cb).
  // Their difference is linear in u: u = N(v) / D(v). Substituting into the
  // second equation and clearing D^2 yields a quartic in v.
  const double d = (a2 - c2) / b2;
  const std::array<double, 3> N{1.0 + d, -2.0 * d * cb, d - 1.0};
  const std::array<double, 2> D{2.0 * cg, -2.0 * ca};
  const std::array<double, 3> W{1.0, -2.0 * cb, 1.0};

  const Poly DD = poly_mul(D, D);
  const Poly NN = poly_mul(N, N);
  const Poly ND = poly_mul(N, D);
  const Poly WDD = poly_mul(W, std::span<const double>(DD.data(), 3));
  Poly quartic{};
  for (std::size_t i = 0; i < 5; ++i) {
    quartic[i] = DD[i] + NN[i] - 2.0 * cg * ND[i] - (c2 / b2) * WDD[i];
  }

  for (double v : real_roots(quartic)) {
    if (v <= 0.0) continue;
    const double dv = D[0] + D[1] * v;
    if (std::abs(dv) < 1e-12) continue;
    const double u = (N[0] + N[1] * v + N[2] * v * v) / dv;
    if (u <= 0.0) continue;
    const double denom = 1.0 + v * v - 2.0 * v * cb;
    if (denom <= 0.0) continue;
    const double s1 = std::sqrt(b2 / denom);
    Eigen::Matrix3d world;
    Eigen::Matrix3d cam;
    world << p1, p2, p3;
    cam << s1 * j1, u * s1 * j2, v * s1 * j3;
    const Eigen::Matrix4d T = Eigen::umeyama(world, cam, false);
    if (!T.allFinite()) continue;
    const Matrix3 R_cw = T.topLeftCorner<3, 3>();
    const Vector3 t_cw = T.topRightCorner<3, 1>();
    Pose cam_from_world(Eigen::Quaterniond(R_cw), t_cw);
    solutions.push_back(inverse(cam_from_world));
  }
  return solutions;
}

double reprojection_error(const Pose& pose, const CameraIntrinsics& camera,
                          const Match2D3D& match) {
  Vector2 pixel;
  if (!try_project(pose, camera, match.world_point, &pixel)) {
    return std::numeric_limits<double>::infinity();
  }
  return (pixel - match.query_point).norm();
}

Pose refine_pose(const Pose& initial, std::span<const Match2D3D> matches,
                 const CameraIntrinsics& camera, int max_iterations) {
  Pose pose = initial;
  double cost = pose_cost(pose, matches, camera);
  if (!std::isfinite(cost) || matches.empty()) return pose;
  double lambda = 1e-4;
  using Matrix6 = Eigen::Matrix<double, 6, 6>;
  for (int iter = 0; iter < max_iterations; ++iter) {
    Matrix6 H = Matrix6::Zero();
    Vector6 g = Vector6::Zero();
    const Matrix3 Rt = pose.rotation_matrix().transpose();
    for (const auto& m : matches) {
      const Vector3 d = m.world_point - pose.translation;
      const Vector3 pc = Rt * d;
      const double iz = 1.0 / pc.z();
      Eigen::Matrix<double, 2, 3> du_dpc;
      du_dpc << camera.fx * iz, 0.0, -camera.fx * pc.x() * iz * iz, 0.0,
          camera.fy * iz, -camera.fy * pc.y() * iz * iz;
      // Perturbation: R <- exp(w) R, t <- t + dt.
      Eigen::Matrix<double, 2, 6> J;
      J.leftCols<3>() = du_dpc * Rt * skew(d);
      J.rightCols<3>() = -du_dpc * Rt;
      const Vector2 r(camera.fx * pc.x() * iz + camera.cx - m.query_point.x(),
                      camera.fy * pc.y() * iz + camera.cy - m.query_point.y());
      H += J.transpose() * J;
      g += J.transpose() * r;
    }
    if (g.lpNorm<Eigen::Infinity>() < 1e-12) break;
    bool improved = false;
    for (int attempt = 0; attempt < 10; ++attempt) {
      Matrix6 A = H;
      A.diagonal() *= (1.0 + lambda);
      A.diagonal().array() += 1e-12;
      const Vector6 step = A.ldlt().solve(-g);
      Pose candidate(so3_exp(step.head<3>()) * pose.rotation,
                     pose.translation + step.tail<3>());
      const double new_cost = pose_cost(candidate, matches, camera);
      if (std::isfinite(new_cost) && new_cost < cost) {
        const double drop = cost - new_cost;
        pose = candidate;
        cost = new_cost;
        lambda = std::max(lambda * 0.1, 1e-10);
        improved = drop > 1e-14 * (1.0 + cost);
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }
  return pose;
}

std::vector<Match2D3D> dedupe_matches(std::span<const Match2D3D> matches,
                                      const Pose& pose_hint,
                                      const CameraIntrinsics& camera,
                                      double radius_px) {
  std::vector<double> error(matches.size());
  for (std::size_t i = 0; i < matches.size(); ++i) {
    error[i] = reprojection_error(pose_hint, camera, matches[i]);
  }
  std::vector<std::size_t> order(matches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return error[a] < error[b];
  });
  const double r2 = radius_px * radius_px;
  std::vector<bool> keep(matches.size(), false);
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool duplicate = false;
    for (std::size_t k : kept) {
      if ((matches[k].query_point - matches[i].query_point).squaredNorm() <= r2) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) {
      keep[i] = true;
      kept.push_back(i);
    }
  }
  std::vector<Match2D3D> out;
  out.reserve(kept.size());
  for (std::size_t i = 0; i < matches.size(); ++i) {
    if (keep[i]) out.push_back(matches[i]);
  }
  return out;
}

PnPResult ransac_pnp(std::span<const Match2D3D> matches,
                     const CameraIntrinsics& camera,
                     const RansacOptions& options) {
  const std::size_t n = matches.size();
  if (n < 4) {
    throw Error(ErrorCode::kTooFewMatches, "RANSAC-PnP needs at least 4 matches");
  }
  std::vector<Vector3> bearings(n);
  for (std::size_t i = 0; i < n; ++i) {
    bearings[i] = bearing(camera, matches[i].query_point);
  }
  const double thr2 = options.threshold_px * options.threshold_px;
  Pcg32 rng(options.seed);

  Pose best_pose;
  std::size_t best_count = 0;
  int required = options.max_iterations;
  int iter = 0;
  for (; iter < std::min(required, options.max_iterations); ++iter) {
    std::array<std::size_t, 4> sample{};
    for (std::size_t s = 0; s < 4; ++s) {
      bool fresh = false;
      while (!fresh) {
        sample[s] = rng.below(static_cast<std::uint32_t>(n));
        fresh = std::find(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(s),
                          sample[s]) == sample.begin() + static_cast<std::ptrdiff_t>(s);
      }
    }
    const std::array<Vector3, 3> b{bearings[sample[0]], bearings[sample[1]],
                                   bearings[sample[2]]};
    const std::array<Vector3, 3> w{matches[sample[0]].world_point,
                                   matches[sample[1]].world_point,
                                   matches[sample[2]].world_point};
    const auto hypotheses = solve_p3p(b, w);
    const Pose* chosen = nullptr;
    double chosen_err = std::numeric_limits<double>::infinity();
    for (const auto& h : hypotheses) {
      const double e = reprojection_error(h, camera, matches[sample[3]]);
      if (e < chosen_err) {
        chosen_err = e;
        chosen = &h;
      }
    }
    if (chosen == nullptr || chosen_err * chosen_err > thr2) continue;
    const std::size_t count = count_inliers(*chosen, matches, camera, thr2);
    if (count > best_count) {
      best_count = count;
      best_pose = *chosen;
      const double ratio = static_cast<double>(count) / static_cast<double>(n);
      const double p_good = std::pow(ratio, 4);
      if (p_good >= 1.0 - 1e-12) {
        required = iter + 1;
      } else if (p_good > 0.0) {
        const double needed =
            std::log(1.0 - options.confidence) / std::log(1.0 - p_good);
        required = static_cast<int>(std::min<double>(std::ceil(needed),
                                                     options.max_iterations));
      }
    }
  }
  if (best_count < 4) {
    throw Error(ErrorCode::kNoConsensus, "no hypothesis with 4 inliers");
  }

  // Local optimisation: alternate refit on the inliers and re-scoring until
  // the inlier set stops changing.
  PnPResult result;
  result.iterations = iter;
  Pose pose = best_pose;
  std::vector<std::size_t> inliers = collect_inliers(pose, matches, camera, thr2);
  for (int round = 0; round < 4; ++round) {
    std::vector<Match2D3D> subset;
    subset.reserve(inliers.size());
    for (std::size_t i : inliers) subset.push_back(matches[i]);
    const Pose refined = refine_pose(pose, subset, camera, options.refine_iterations);
    auto next = collect_inliers(refined, matches, camera, thr2);
    if (next.size() < inliers.size()) break;
    pose = refined;
    if (next == inliers) break;
    inliers = std::move(next);
  }
  inliers = collect_inliers(pose, matches, camera, thr2);
  if (inliers.size() < 4) {
    throw Error(ErrorCode::kNoConsensus, "refined model lost its support");
  }
  result.pose = pose;
  result.inlier_indices = inliers;
  for (std::size_t i : inliers) result.inliers.push_back(matches[i]);
  return result;
}

std::optional<Candidate> localize_session(int frame_id, int session_id,
                                          std::span<const Match2D3D> matches,
                                          const CameraIntrinsics& camera,
                                          const LocalizationOptions& options) {
  return localize_grouped(frame_id, session_id, matches, camera, options);
}

CandidateSet localize_frame(int frame_id, std::span<const Match2D3D> matches,
                            const CameraIntrinsics& camera,
                            const LocalizationOptions& options) {
  std::map<int, std::vector<Match2D3D>> by_session;
  for (const auto& m : matches) by_session[m.session_id].push_back(m);
  CandidateSet set;
  set.frame_id = frame_id;
  for (const auto& [session, group] : by_session) {
    if (auto c = localize_session(frame_id, session, group, camera, options)) {
      set.candidates.push_back(std::move(*c));
    }
  }
  return set;
}

std::optional<Candidate> localize_merged(int frame_id,
                                         std::span<const Match2D3D> matches,
                                         const CameraIntrinsics& camera,
                                         const LocalizationOptions& options) {
  return localize_grouped(frame_id, -1, matches, camera, options);
}

}  // namespace msloc
