#include "msloc/geometry.h"

#include <cmath>
#include <string>

#include "msloc/error.h"

namespace msloc {

Pose::Pose(const Eigen::Quaterniond& q, const Vector3& t)
    : rotation(q.normalized()), translation(t) {}

Pose Pose::from_translation(const Vector3& t) {
  return Pose(Eigen::Quaterniond::Identity(), t);
}

Pose Pose::from_rotation(const Eigen::Quaterniond& q) {
  return Pose(q, Vector3::Zero());
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "focal lengths must be positive");
  }
  if (!(cx > 0.0 && cx < width) || !(cy > 0.0 && cy < height)) {
    throw Error(ErrorCode::kInvalidConfig,
                "principal point must lie inside the image");
  }
}

Matrix3 CameraIntrinsics::matrix() const {
  Matrix3 K;
  K << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return K;
}

Matrix3 CameraIntrinsics::inverse_matrix() const {
  Matrix3 K_inv;
  K_inv << 1.0 / fx, 0.0, -cx / fx, 0.0, 1.0 / fy, -cy / fy, 0.0, 0.0, 1.0;
  return K_inv;
}

Pose compose(const Pose& a, const Pose& b) {
  Pose out;
  out.rotation = (a.rotation * b.rotation).normalized();
  out.translation = a.rotation * b.translation + a.translation;
  return out;
}

Pose inverse(const Pose& p) {
  Pose out;
  out.rotation = p.rotation.conjugate().normalized();
  out.translation = -(out.rotation * p.translation);
  return out;
}

Pose relative_pose(const Pose& a, const Pose& b) {
  return compose(inverse(a), b);
}

Matrix3 skew(const Vector3& v) {
  Matrix3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Eigen::Quaterniond so3_exp(const Vector3& omega) {
  const double theta = omega.norm();
  if (theta < 1e-12) {
    Eigen::Quaterniond q(1.0, 0.5 * omega.x(), 0.5 * omega.y(),
                         0.5 * omega.z());
    return q.normalized();
  }
  return Eigen::Quaterniond(Eigen::AngleAxisd(theta, omega / theta));
}

Vector3 so3_log(const Eigen::Quaterniond& q_in) {
  Eigen::Quaterniond q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vector3 v = q.vec();
  const double s = v.norm();
  if (s < 1e-12) return 2.0 * v / q.w();
  const double theta = 2.0 * std::atan2(s, q.w());
  return v * (theta / s);
}

double rotation_angle(const Pose& p) { return so3_log(p.rotation).norm(); }

double rotation_angle_between(const Pose& a, const Pose& b) {
  return so3_log(a.rotation.conjugate() * b.rotation).norm();
}

bool try_project(const Pose& world_from_camera, const CameraIntrinsics& camera,
                 const Vector3& world_point, Vector2* pixel) {
  const Vector3 pc = world_from_camera.transform_inverse(world_point);
  if (!(pc.z() > 0.0)) return false;
  *pixel = Vector2(camera.fx * pc.x() / pc.z() + camera.cx,
                   camera.fy * pc.y() / pc.z() + camera.cy);
  return true;
}

Vector2 project(const Pose& world_from_camera, const CameraIntrinsics& camera,
                const Vector3& world_point) {
  Vector2 pixel;
  if (!try_project(world_from_camera, camera, world_point, &pixel)) {
    throw Error(ErrorCode::kBehindCamera, "point has non-positive depth");
  }
  return pixel;
}

Vector3 bearing(const CameraIntrinsics& camera, const Vector2& pixel) {
  return Vector3((pixel.x() - camera.cx) / camera.fx,
                 (pixel.y() - camera.cy) / camera.fy, 1.0)
      .normalized();
}

Vector3 unproject(const Pose& world_from_camera, const CameraIntrinsics& camera,
                  const Vector2& pixel, double depth) {
  const Vector3 pc((pixel.x() - camera.cx) / camera.fx * depth,
                   (pixel.y() - camera.cy) / camera.fy * depth, depth);
  return world_from_camera.transform(pc);
}

Matrix3 fundamental_from_poses(const Pose& pose_a, const Pose& pose_b,
                               const CameraIntrinsics& camera_a,
                               const CameraIntrinsics& camera_b) {
  // b_from_a maps camera-a coordinates into camera b.
  const Pose b_from_a = compose(inverse(pose_b), pose_a);
  if (b_from_a.translation.norm() <= kMinBaseline) {
    throw Error(ErrorCode::kDegenerateBaseline,
                "relative translation norm is zero");
  }
  const Matrix3 E = skew(b_from_a.translation) * b_from_a.rotation_matrix();
  return camera_b.inverse_matrix().transpose() * E *
         camera_a.inverse_matrix();
}

double sampson_error(const Matrix3& F, const Vector2& x_a,
                     const Vector2& x_b) {
  const Vector3 a = x_a.homogeneous();
  const Vector3 b = x_b.homogeneous();
  const Vector3 Fa = F * a;
  const Vector3 Ftb = F.transpose() * b;
  const double denom =
      Fa.x() * Fa.x() + Fa.y() * Fa.y() + Ftb.x() * Ftb.x() + Ftb.y() * Ftb.y();
  if (!(denom > kMinSampsonDenominator)) {
    throw Error(ErrorCode::kDegenerateDenominator,
                "correspondence lies at both epipoles");
  }
  const double num = b.dot(Fa);
  return num * num / denom;
}

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kBehindCamera: return "BehindCamera";
    case ErrorCode::kDegenerateBaseline: return "DegenerateBaseline";
    case ErrorCode::kDegenerateDenominator: return "DegenerateDenominator";
    case ErrorCode::kInsufficientParallax: return "InsufficientParallax";
    case ErrorCode::kCheiralityViolation: return "CheiralityViolation";
    case ErrorCode::kTooFewMatches: return "TooFewMatches";
    case ErrorCode::kNoConsensus: return "NoConsensus";
    case ErrorCode::kEmptySequence: return "EmptySequence";
    case ErrorCode::kTooLarge: return "TooLarge";
    case ErrorCode::kEmptyMatchSet: return "EmptyMatchSet";
    case ErrorCode::kSolverDiverged: return "SolverDiverged";
    case ErrorCode::kNoSeeds: return "NoSeeds";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kInvalidInput: return "InvalidInput";
    case ErrorCode::kNoOverlap: return "NoOverlap";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kMissingInput: return "MissingInput";
  }
  return "Unknown";
}

}  // namespace msloc
