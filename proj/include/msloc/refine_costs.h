#pragma once

// Templated residuals of the refinement objective, shared by the solver
// (automatic differentiation) and the plain-double evaluation of the
// objective. Poses are parameterized as an Eigen-ordered quaternion
// [x, y, z, w] plus a translation, world_from_camera.

#include <cmath>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "msloc/geometry.h"

namespace msloc::costs {

template <typename T>
Eigen::Matrix<T, 3, 1> quaternion_log(const Eigen::Quaternion<T>& q_in) {
  using std::atan2;
  using std::sqrt;
  Eigen::Quaternion<T> q = q_in;
  if (q.w() < T(0)) q.coeffs() = -q.coeffs();
  const Eigen::Matrix<T, 3, 1> v = q.vec();
  const T s2 = v.squaredNorm();
  if (s2 < T(1e-24)) return T(2) * v / q.w();
  const T s = sqrt(s2);
  return v * (T(2) * atan2(s, q.w()) / s);
}

// [t_a - t_b; weight * log(q_b^-1 q_a)]
template <typename T>
void pose_error(const Eigen::Quaternion<T>& qa, const Eigen::Matrix<T, 3, 1>& ta,
                const Eigen::Quaternion<T>& qb, const Eigen::Matrix<T, 3, 1>& tb,
                double rotation_weight, T* residual) {
  Eigen::Map<Eigen::Matrix<T, 6, 1>> r(residual);
  r.template head<3>() = ta - tb;
  r.template tail<3>() = T(rotation_weight) * quaternion_log<T>(qb.conjugate() * qa);
}

struct PriorResidual {
  Pose prior;
  double rotation_weight = 1.0;

  template <typename T>
  bool operator()(const T* q, const T* t, T* residual) const {
    const Eigen::Map<const Eigen::Quaternion<T>> qx(q);
    const Eigen::Map<const Eigen::Matrix<T, 3, 1>> tx(t);
    pose_error<T>(qx, tx, prior.rotation.cast<T>(), prior.translation.cast<T>(),
                  rotation_weight, residual);
    return true;
  }
};

struct RelativeResidual {
  Pose z;
  double rotation_weight = 1.0;

  template <typename T>
  bool operator()(const T* qa, const T* ta, const T* qb, const T* tb, T* residual) const {
    const Eigen::Map<const Eigen::Quaternion<T>> Qa(qa);
    const Eigen::Map<const Eigen::Matrix<T, 3, 1>> Ta(ta);
    const Eigen::Map<const Eigen::Quaternion<T>> Qb(qb);
    const Eigen::Map<const Eigen::Matrix<T, 3, 1>> Tb(tb);
    const Eigen::Matrix<T, 3, 3> Ra = Qa.toRotationMatrix();
    const Eigen::Quaternion<T> qh = Qa.conjugate() * Qb;
    const Eigen::Matrix<T, 3, 1> th = Ra.transpose() * (Tb - Ta);
    pose_error<T>(qh, th, z.rotation.cast<T>(), z.translation.cast<T>(), rotation_weight,
                  residual);
    return true;
  }
};

// Scale turning a residual r with s = |r|^2 into one whose squared norm is
// huber(s): r * sqrt(huber(s) / s). Continuously differentiable in s.
template <typename T>
T huber_scale(const T& s, double width_squared) {
  using std::sqrt;
  if (!(s > T(width_squared))) return T(1);
  const double d = std::sqrt(width_squared);
  return sqrt((T(2 * d) * sqrt(s) - T(width_squared)) / s);
}

// Points closer than this, or behind the camera, are projected from this
// depth. The residual stays finite and such matches sit in the linear Huber
// region; a tiny clamp would instead give errors of millions of pixels that
// dominate the E-step data term of an outlier prior and pull its frame away.
constexpr double kMinProjectionDepth = 0.5;

// All 2D-3D matches of one frame: 2 residuals per match, Huber-transformed.
struct ReprojectionResidual {
  std::vector<Vector2> pixels;
  std::vector<Vector3> points;
  CameraIntrinsics camera;
  double huber_px = 3.0;

  int size() const { return 2 * static_cast<int>(pixels.size()); }

  template <typename T>
  bool operator()(const T* q, const T* t, T* residual) const {
    const Eigen::Map<const Eigen::Quaternion<T>> qx(q);
    const Eigen::Map<const Eigen::Matrix<T, 3, 1>> tx(t);
    const Eigen::Matrix<T, 3, 3> Rt = qx.toRotationMatrix().transpose();
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      const Eigen::Matrix<T, 3, 1> pc = Rt * (points[i].cast<T>() - tx);
      T z = pc.z();
      if (z < T(kMinProjectionDepth)) z = T(kMinProjectionDepth);
      const T ex = T(camera.fx) * pc.x() / z + T(camera.cx) - T(pixels[i].x());
      const T ey = T(camera.fy) * pc.y() / z + T(camera.cy) - T(pixels[i].y());
      const T k = huber_scale<T>(ex * ex + ey * ey, huber_px * huber_px);
      residual[2 * i] = k * ex;
      residual[2 * i + 1] = k * ey;
    }
    return true;
  }
};

// All tracked correspondences of one frame pair. Each residual is the signed
// square root of the Sampson error, x_b^T F x_a / sqrt(denominator), with F
// built from b_from_a = inverse(X_b) X_a, then Huber-transformed.
struct SampsonResidual {
  std::vector<Vector2> a;
  std::vector<Vector2> b;
  CameraIntrinsics camera;
  double huber_sq_px = 4.0;

  int size() const { return static_cast<int>(a.size()); }

  template <typename T>
  bool operator()(const T* qa, const T* ta, const T* qb, const T* tb, T* residual) const {
    using std::sqrt;
    const Eigen::Map<const Eigen::Quaternion<T>> Qa(qa);
    const Eigen::Map<const Eigen::Matrix<T, 3, 1>> Ta(ta);
    const Eigen::Map<const Eigen::Quaternion<T>> Qb(qb);
    const Eigen::Map<const Eigen::Matrix<T, 3, 1>> Tb(tb);
    const Eigen::Matrix<T, 3, 3> Ra = Qa.toRotationMatrix();
    const Eigen::Matrix<T, 3, 3> RbT = Qb.toRotationMatrix().transpose();
    const Eigen::Matrix<T, 3, 3> R = RbT * Ra;
    const Eigen::Matrix<T, 3, 1> tr = RbT * (Ta - Tb);
    Eigen::Matrix<T, 3, 3> tx;
    tx << T(0), -tr.z(), tr.y(), tr.z(), T(0), -tr.x(), -tr.y(), tr.x(), T(0);
    const Eigen::Matrix<T, 3, 3> E = tx * R;

    const double fx = camera.fx, fy = camera.fy;
    const double ifx2 = 1.0 / (fx * fx), ify2 = 1.0 / (fy * fy);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const Eigen::Vector3d na((a[i].x() - camera.cx) / fx, (a[i].y() - camera.cy) / fy, 1.0);
      const Eigen::Vector3d nb((b[i].x() - camera.cx) / fx, (b[i].y() - camera.cy) / fy, 1.0);
      const Eigen::Matrix<T, 3, 1> Ea = E * na.cast<T>();
      const Eigen::Matrix<T, 3, 1> Etb = E.transpose() * nb.cast<T>();
      const T den = (Ea.x() * Ea.x() + Etb.x() * Etb.x()) * T(ifx2) +
                    (Ea.y() * Ea.y() + Etb.y() * Etb.y()) * T(ify2);
      const T r = nb.cast<T>().dot(Ea) / sqrt(den + T(1e-300));
      residual[i] = huber_scale<T>(r * r, huber_sq_px) * r;
    }
    return true;
  }
};

// Plain-double evaluation helpers.
inline void pose_blocks(const Pose& p, double* q, double* t) {
  Eigen::Map<Eigen::Vector4d> qm(q);
  Eigen::Map<Eigen::Vector3d> tm(t);
  qm = p.rotation.coeffs();
  tm = p.translation;
}

}  // namespace msloc::costs
