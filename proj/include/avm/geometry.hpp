#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <numbers>

namespace avm {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Points in meters. Ground features produced by BEV back-projection carry
/// z = 1 in the virtual camera frame and z = 0 in the vehicle frame.
using Point3 = Eigen::Vector3d;

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

/// Planar rigid transform: vehicle poses, graph edge measurements and ICP
/// results. Yaw is kept wrapped to (-pi, pi].
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;

  Pose2() = default;
  Pose2(double x_, double y_, double yaw_) : x(x_), y(y_), yaw(wrap_angle(yaw_)) {}

  static Pose2 identity() { return {}; }

  Vec2 translation() const { return {x, y}; }
  Mat2 rotation() const;
  /// 3x3 homogeneous matrix.
  Mat3 matrix() const;
  static Pose2 from_matrix(const Mat3& m);

  Vec2 apply(const Vec2& p) const;

  bool operator==(const Pose2&) const = default;
};

Pose2 compose(const Pose2& a, const Pose2& b);
Pose2 inverse(const Pose2& p);
/// Relative pose of `b` seen from `a`: compose(a, between(a, b)) == b.
Pose2 between(const Pose2& a, const Pose2& b);

inline Pose2 operator*(const Pose2& a, const Pose2& b) { return compose(a, b); }

/// Exact constant-twist motion: advance by forward speed `v` and yaw rate
/// `omega` over `dt`, expressed in the starting body frame.
/// sin(a) / a, with the series near zero.
double sinc(double a);

Pose2 integrate_twist(double v, double omega, double dt);

/// SE(2) logarithm: (rho_x, rho_y, theta).
Vec3 log_se2(const Pose2& p);
Pose2 exp_se2(const Vec3& xi);

/// Rigid 3D transform (rotation + translation), e.g. BEV camera to vehicle.
class Transform3 {
 public:
  Transform3() : r_(Mat3::Identity()), t_(Vec3::Zero()) {}
  /// Throws DomainError unless `rotation` is orthonormal with det +1 (1e-9).
  Transform3(const Mat3& rotation, const Vec3& translation);

  static Transform3 identity() { return {}; }
  static Transform3 from_matrix(const Mat4& m);

  const Mat3& rotation() const { return r_; }
  const Vec3& translation() const { return t_; }
  Mat4 matrix() const;
  Transform3 inverse() const;

  Point3 apply(const Point3& p) const { return r_ * p + t_; }

 private:
  Mat3 r_;
  Vec3 t_;
};

Point3 transform_point(const Transform3& t, const Point3& p);
Transform3 compose(const Transform3& a, const Transform3& b);

}  // namespace avm
