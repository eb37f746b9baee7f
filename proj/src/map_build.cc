#include "msloc/map_build.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <unordered_map>

#include <Eigen/Dense>

#include "msloc/error.h"

namespace msloc {
namespace {

double squared_reprojection(const Vector3& point, const ViewObservation& view) {
  Vector2 pixel;
  if (!try_project(view.pose, view.camera, point, &pixel)) {
    return std::numeric_limits<double>::infinity();
  }
  return (pixel - view.pixel).squaredNorm();
}

double total_error(const Vector3& point,
                   std::span<const ViewObservation> views) {
  double sum = 0.0;
  for (const auto& v : views) sum += squared_reprojection(point, v);
  return sum;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) {
    std::iota(parent_.begin(), parent_.end(), std::size_t{0});
  }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace

const MapFrame* SessionMap::find_frame(int frame_id) const {
  for (const auto& f : frames) {
    if (f.id == frame_id) return &f;
  }
  return nullptr;
}

void validate_session_map(const SessionMap& map) {
  std::unordered_map<int, const MapFrame*> frames;
  for (const auto& f : map.frames) frames[f.id] = &f;
  for (const auto& p : map.points) {
    if (p.observations.size() < 2) {
      throw Error(ErrorCode::kInvalidInput,
                  "point " + std::to_string(p.id) + " has fewer than 2 observations");
    }
    for (const auto& obs : p.observations) {
      auto it = frames.find(obs.frame_id);
      if (it == frames.end()) {
        throw Error(ErrorCode::kInvalidInput,
                    "point " + std::to_string(p.id) + " observed in unknown frame " +
                        std::to_string(obs.frame_id));
      }
      const ViewObservation view{it->second->pose, it->second->camera, obs.pixel};
      const double err = std::sqrt(squared_reprojection(p.position, view));
      if (err > map.max_reprojection_error) {
        throw Error(ErrorCode::kInvalidInput,
                    "point " + std::to_string(p.id) + " reprojects " +
                        std::to_string(err) + "px off in frame " +
                        std::to_string(obs.frame_id));
      }
    }
  }
}

double total_reprojection_error(const SessionMap& map) {
  std::unordered_map<int, const MapFrame*> frames;
  for (const auto& f : map.frames) frames[f.id] = &f;
  double sum = 0.0;
  for (const auto& p : map.points) {
    for (const auto& obs : p.observations) {
      const MapFrame* f = frames.at(obs.frame_id);
      sum += squared_reprojection(p.position, {f->pose, f->camera, obs.pixel});
    }
  }
  return sum;
}

std::vector<std::size_t> epipolar_inliers(const MatchSet2D2D& matches,
                                          const Pose& pose_a,
                                          const Pose& pose_b,
                                          const CameraIntrinsics& camera,
                                          double threshold) {
  std::vector<std::size_t> keep;
  if (matches.matches.empty()) return keep;
  const Matrix3 F = fundamental_from_poses(pose_a, pose_b, camera, camera);
  for (std::size_t i = 0; i < matches.matches.size(); ++i) {
    const auto& m = matches.matches[i];
    try {
      if (sampson_error(F, m.a, m.b) <= threshold) keep.push_back(i);
    } catch (const Error&) {
      // Both points at the epipoles: the constraint says nothing, drop it.
    }
  }
  return keep;
}

MatchSet2D2D prune_epipolar(const MatchSet2D2D& matches, const Pose& pose_a,
                            const Pose& pose_b, const CameraIntrinsics& camera,
                            double threshold) {
  MatchSet2D2D out{matches.frame_a, matches.frame_b, {}};
  for (std::size_t i :
       epipolar_inliers(matches, pose_a, pose_b, camera, threshold)) {
    out.matches.push_back(matches.matches[i]);
  }
  return out;
}

Vector3 refine_point(const Vector3& initial,
                     std::span<const ViewObservation> observations,
                     int max_iterations, double gradient_tolerance) {
  Vector3 x = initial;
  double cost = total_error(x, observations);
  if (!std::isfinite(cost)) return x;
  double lambda = 1e-4;
  for (int iter = 0; iter < max_iterations; ++iter) {
    Eigen::Matrix3d H = Eigen::Matrix3d::Zero();
    Vector3 g = Vector3::Zero();
    for (const auto& v : observations) {
      const Vector3 pc = v.pose.transform_inverse(x);
      const double iz = 1.0 / pc.z();
      Eigen::Matrix<double, 2, 3> du_dpc;
      du_dpc << v.camera.fx * iz, 0.0, -v.camera.fx * pc.x() * iz * iz, 0.0,
          v.camera.fy * iz, -v.camera.fy * pc.y() * iz * iz;
      const Eigen::Matrix<double, 2, 3> J =
          du_dpc * v.pose.rotation_matrix().transpose();
      const Vector2 r(v.camera.fx * pc.x() * iz + v.camera.cx - v.pixel.x(),
                      v.camera.fy * pc.y() * iz + v.camera.cy - v.pixel.y());
      H += J.transpose() * J;
      g += J.transpose() * r;
    }
    if (g.lpNorm<Eigen::Infinity>() < gradient_tolerance) break;
    bool improved = false;
    for (int attempt = 0; attempt < 10; ++attempt) {
      Eigen::Matrix3d A = H;
      A.diagonal() *= (1.0 + lambda);
      A.diagonal().array() += 1e-12;
      const Vector3 step = A.ldlt().solve(-g);
      const Vector3 candidate = x + step;
      const double new_cost = total_error(candidate, observations);
      if (std::isfinite(new_cost) && new_cost < cost) {
        x = candidate;
        const double drop = cost - new_cost;
        cost = new_cost;
        lambda = std::max(lambda * 0.1, 1e-10);
        improved = drop > 1e-15 * (1.0 + cost);
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }
  return x;
}

Vector3 triangulate(std::span<const ViewObservation> observations,
                    const TriangulationOptions& options) {
  if (observations.size() < 2) {
    throw Error(ErrorCode::kInvalidInput,
                "triangulation needs at least two observations");
  }
  double max_baseline = 0.0;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    for (std::size_t j = i + 1; j < observations.size(); ++j) {
      max_baseline = std::max(max_baseline, (observations[i].pose.center() -
                                             observations[j].pose.center())
                                                .norm());
    }
  }
  if (max_baseline <= kMinBaseline) {
    throw Error(ErrorCode::kInsufficientParallax, "all camera centres coincide");
  }

  Eigen::MatrixXd A(2 * observations.size(), 4);
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const auto& v = observations[i];
    const Pose cam_from_world = inverse(v.pose);
    Eigen::Matrix<double, 3, 4> P;
    P.leftCols<3>() = cam_from_world.rotation_matrix();
    P.col(3) = cam_from_world.translation;
    P = v.camera.matrix() * P;
    Eigen::RowVector4d r0 = v.pixel.x() * P.row(2) - P.row(0);
    Eigen::RowVector4d r1 = v.pixel.y() * P.row(2) - P.row(1);
    A.row(2 * i) = r0 / std::max(r0.norm(), 1e-300);
    A.row(2 * i + 1) = r1 / std::max(r1.norm(), 1e-300);
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d h = svd.matrixV().col(3);
  if (std::abs(h(3)) < 1e-12 * h.head<3>().norm()) {
    throw Error(ErrorCode::kInsufficientParallax, "point at infinity");
  }
  Vector3 x = h.head<3>() / h(3);

  double max_angle = 0.0;
  for (std::size_t i = 0; i < observations.size(); ++i) {
    const Vector3 ri = (x - observations[i].pose.center()).normalized();
    for (std::size_t j = i + 1; j < observations.size(); ++j) {
      const Vector3 rj = (x - observations[j].pose.center()).normalized();
      max_angle = std::max(
          max_angle, std::atan2(ri.cross(rj).norm(), ri.dot(rj)));
    }
  }
  if (max_angle * 180.0 / std::numbers::pi < options.min_angle_deg) {
    throw Error(ErrorCode::kInsufficientParallax,
                "triangulation angle below minimum");
  }
  for (const auto& v : observations) {
    if (v.pose.transform_inverse(x).z() <= 0.0) {
      throw Error(ErrorCode::kCheiralityViolation,
                  "linear solution behind a camera");
    }
  }

  x = refine_point(x, observations, options.max_iterations);
  for (const auto& v : observations) {
    if (v.pose.transform_inverse(x).z() <= 0.0) {
      throw Error(ErrorCode::kCheiralityViolation,
                  "refined point behind a camera");
    }
  }
  return x;
}

SessionMap refine_structure(const SessionMap& map,
                            const StructureRefinementOptions& options) {
  std::unordered_map<int, const MapFrame*> frames;
  for (const auto& f : map.frames) frames[f.id] = &f;

  SessionMap out = map;
  std::vector<ViewObservation> views;
  for (auto& point : out.points) {
    views.clear();
    for (const auto& obs : point.observations) {
      const MapFrame* f = frames.at(obs.frame_id);
      views.push_back({f->pose, f->camera, obs.pixel});
    }
    point.position = refine_point(point.position, views, options.max_iterations,
                                  options.gradient_tolerance);
  }
  return out;
}

SessionMap build_session_map(int session_id,
                             std::span<const DatabaseView> views,
                             std::span<const IndexedMatches> matches,
                             const MapBuildOptions& options) {
  std::unordered_map<int, std::size_t> view_index;
  std::vector<std::size_t> offset(views.size() + 1, 0);
  for (std::size_t i = 0; i < views.size(); ++i) {
    view_index[views[i].frame.id] = i;
    offset[i + 1] = offset[i] + views[i].keypoints.size();
  }

  UnionFind tracks(offset.back());
  for (const auto& pair : matches) {
    const auto ia = view_index.find(pair.frame_a);
    const auto ib = view_index.find(pair.frame_b);
    if (ia == view_index.end() || ib == view_index.end()) {
      throw Error(ErrorCode::kInvalidInput, "match references unknown view");
    }
    const DatabaseView& va = views[ia->second];
    const DatabaseView& vb = views[ib->second];
    MatchSet2D2D set{pair.frame_a, pair.frame_b, {}};
    set.matches.reserve(pair.pairs.size());
    for (const auto& [ka, kb] : pair.pairs) {
      set.matches.push_back({va.keypoints.at(ka), vb.keypoints.at(kb)});
    }
    for (std::size_t i :
         epipolar_inliers(set, va.frame.pose, vb.frame.pose, va.frame.camera,
                          options.epipolar_threshold)) {
      tracks.unite(offset[ia->second] + pair.pairs[i].first,
                   offset[ib->second] + pair.pairs[i].second);
    }
  }

  // Group nodes by root, keeping only multi-node tracks.
  std::unordered_map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t v = 0; v < views.size(); ++v) {
    for (std::size_t k = 0; k < views[v].keypoints.size(); ++k) {
      const std::size_t node = offset[v] + k;
      groups[tracks.find(node)].push_back(node);
    }
  }
  std::vector<std::size_t> roots;
  for (const auto& [root, nodes] : groups) {
    if (nodes.size() >= 2) roots.push_back(root);
  }
  std::sort(roots.begin(), roots.end());

  SessionMap map;
  map.session_id = session_id;
  map.max_reprojection_error = options.max_reprojection_error;
  for (const auto& v : views) map.frames.push_back(v.frame);

  const double max_sq = options.max_reprojection_error * options.max_reprojection_error;
  std::vector<ViewObservation> track_views;
  std::vector<MapObservation> track_obs;
  for (std::size_t root : roots) {
    const auto& nodes = groups[root];
    track_views.clear();
    track_obs.clear();
    bool conflict = false;
    for (std::size_t node : nodes) {
      const std::size_t v = static_cast<std::size_t>(
          std::upper_bound(offset.begin(), offset.end(), node) - offset.begin() - 1);
      const int k = static_cast<int>(node - offset[v]);
      for (const auto& o : track_obs) {
        if (o.frame_id == views[v].frame.id) conflict = true;
      }
      track_obs.push_back({views[v].frame.id, views[v].keypoints[k], k});
      track_views.push_back(
          {views[v].frame.pose, views[v].frame.camera, views[v].keypoints[k]});
    }
    // Two keypoints of one view in the same track means a surviving mismatch
    // merged two tracks; the track is unusable.
    if (conflict) continue;

    Vector3 x;
    bool ok = false;
    while (track_views.size() >= 2) {
      try {
        x = triangulate(track_views, options.triangulation);
      } catch (const Error&) {
        break;
      }
      std::size_t worst = 0;
      double worst_err = -1.0;
      for (std::size_t i = 0; i < track_views.size(); ++i) {
        const double e = squared_reprojection(x, track_views[i]);
        if (e > worst_err) {
          worst_err = e;
          worst = i;
        }
      }
      if (worst_err <= max_sq) {
        ok = true;
        break;
      }
      track_views.erase(track_views.begin() + static_cast<std::ptrdiff_t>(worst));
      track_obs.erase(track_obs.begin() + static_cast<std::ptrdiff_t>(worst));
    }
    if (!ok) continue;
    map.points.push_back({static_cast<int>(map.points.size()), x, track_obs});
  }

  map = refine_structure(map, options.refinement);

  // Refinement lowers the total error but may move single observations past
  // the threshold; re-establish the per-observation invariant.
  std::unordered_map<int, const MapFrame*> frames;
  for (const auto& f : map.frames) frames[f.id] = &f;
  std::vector<MapPoint> kept;
  kept.reserve(map.points.size());
  for (auto& p : map.points) {
    std::erase_if(p.observations, [&](const MapObservation& o) {
      const MapFrame* f = frames.at(o.frame_id);
      return squared_reprojection(p.position, {f->pose, f->camera, o.pixel}) > max_sq;
    });
    if (p.observations.size() >= 2) {
      p.id = static_cast<int>(kept.size());
      kept.push_back(std::move(p));
    }
  }
  map.points = std::move(kept);
  return map;
}

}  // namespace msloc
