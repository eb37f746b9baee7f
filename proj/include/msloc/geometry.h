#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace msloc {

using Vector2 = Eigen::Vector2d;
using Vector3 = Eigen::Vector3d;
using Matrix3 = Eigen::Matrix3d;
using Vector6 = Eigen::Matrix<double, 6, 1>;

// Rigid transform, world-from-camera: x_world = R * x_camera + t.
struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Vector3 translation = Vector3::Zero();

  Pose() = default;
  Pose(const Eigen::Quaterniond& q, const Vector3& t);

  static Pose identity() { return {}; }
  static Pose from_translation(const Vector3& t);
  static Pose from_rotation(const Eigen::Quaterniond& q);

  Matrix3 rotation_matrix() const { return rotation.toRotationMatrix(); }

  // Camera centre in the world frame.
  const Vector3& center() const { return translation; }

  // Maps a point expressed in this pose's local frame to the parent frame.
  Vector3 transform(const Vector3& local) const {
    return rotation * local + translation;
  }
  // Inverse of transform(): parent frame -> local frame.
  Vector3 transform_inverse(const Vector3& parent) const {
    return rotation.conjugate() * (parent - translation);
  }
};

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  // Throws InvalidConfig when fx, fy, cx, cy violate the pinhole invariants.
  void validate() const;

  Matrix3 matrix() const;
  Matrix3 inverse_matrix() const;

  bool contains(const Vector2& pixel, double margin = 0.0) const {
    return pixel.x() >= margin && pixel.y() >= margin &&
           pixel.x() <= width - margin && pixel.y() <= height - margin;
  }
};

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& p);
// Pose of b expressed in a's frame; compose(a, relative_pose(a, b)) == b.
Pose relative_pose(const Pose& a, const Pose& b);

Matrix3 skew(const Vector3& v);

// SO(3) exponential / logarithm with the axis-angle vector convention.
Eigen::Quaterniond so3_exp(const Vector3& omega);
Vector3 so3_log(const Eigen::Quaterniond& q);

double rotation_angle(const Pose& p);
double rotation_angle_between(const Pose& a, const Pose& b);

// Pinhole projection of a world point. Throws BehindCamera when the point's
// depth in the camera frame is not positive.
Vector2 project(const Pose& world_from_camera, const CameraIntrinsics& camera,
                const Vector3& world_point);

// Projection without the depth check; returns false when depth <= 0.
bool try_project(const Pose& world_from_camera, const CameraIntrinsics& camera,
                 const Vector3& world_point, Vector2* pixel);

// World point at `depth` along the ray through `pixel`.
Vector3 unproject(const Pose& world_from_camera, const CameraIntrinsics& camera,
                  const Vector2& pixel, double depth);

// Unit bearing of `pixel` in the camera frame.
Vector3 bearing(const CameraIntrinsics& camera, const Vector2& pixel);

// F with x_b^T F x_a = 0, built as K_b^{-T} [t]x R K_a^{-1} from the pose of
// camera a in camera b's frame. Throws DegenerateBaseline when the relative
// translation norm is at most 1e-12.
Matrix3 fundamental_from_poses(const Pose& pose_a, const Pose& pose_b,
                               const CameraIntrinsics& camera_a,
                               const CameraIntrinsics& camera_b);

inline constexpr double kMinBaseline = 1e-12;
inline constexpr double kMinSampsonDenominator = 1e-15;

// First-order geometric error of (x_a, x_b) w.r.t. F, in squared pixels.
// Throws DegenerateDenominator when the gradient terms all vanish.
double sampson_error(const Matrix3& F, const Vector2& x_a, const Vector2& x_b);

}  // namespace msloc
