#include "avm/geometry.hpp"

#include "avm/errors.hpp"

namespace avm {

double wrap_angle(double a) {
  constexpr double kPi = std::numbers::pi;
  if (a > -kPi && a <= kPi) return a;
  a = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

Mat2 Pose2::rotation() const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  Mat2 r;
  r << c, -s, s, c;
  return r;
}

Mat3 Pose2::matrix() const {
  Mat3 m = Mat3::Identity();
  m.topLeftCorner<2, 2>() = rotation();
  m(0, 2) = x;
  m(1, 2) = y;
  return m;
}

Pose2 Pose2::from_matrix(const Mat3& m) { return {m(0, 2), m(1, 2), std::atan2(m(1, 0), m(0, 0))}; }

Vec2 Pose2::apply(const Vec2& p) const {
  const double c = std::cos(yaw), s = std::sin(yaw);
  return {c * p.x() - s * p.y() + x, s * p.x() + c * p.y() + y};
}

Pose2 compose(const Pose2& a, const Pose2& b) {
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  return {a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.yaw + b.yaw};
}

Pose2 inverse(const Pose2& p) {
  const double c = std::cos(p.yaw), s = std::sin(p.yaw);
  return {-(c * p.x + s * p.y), s * p.x - c * p.y, -p.yaw};
}

Pose2 between(const Pose2& a, const Pose2& b) {
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  const double dx = b.x - a.x, dy = b.y - a.y;
  return {c * dx + s * dy, -s * dx + c * dy, b.yaw - a.yaw};
}

double sinc(double a) {
  if (std::abs(a) < 1e-4) return 1.0 - a * a / 6.0;
  return std::sin(a) / a;
}

Pose2 integrate_twist(double v, double omega, double dt) {
  // Chord of the arc: length v dt sinc(dth/2) along heading dth/2.
  const double dth = omega * dt, h = 0.5 * dth;
  const double chord = v * dt * sinc(h);
  return {chord * std::cos(h), chord * std::sin(h), dth};
}

namespace {

// V(theta)^-1 = [[a, b], [-b, a]] with a = (theta/2) cot(theta/2), b = theta/2.
double half_cot(double th) {
  if (std::abs(th) < 1e-6) return 1.0 - th * th / 12.0;
  const double h = 0.5 * th;
  return h * std::cos(h) / std::sin(h);
}

}  // namespace

Vec3 log_se2(const Pose2& p) {
  const double th = p.yaw;
  const double a = half_cot(th), b = 0.5 * th;
  return {a * p.x + b * p.y, -b * p.x + a * p.y, th};
}

Pose2 exp_se2(const Vec3& xi) {
  const double th = xi.z();
  double sa, ca;  // sin(th)/th, (1-cos(th))/th
  if (std::abs(th) < 1e-9) {
    sa = 1.0 - th * th / 6.0;
    ca = 0.5 * th;
  } else {
    sa = std::sin(th) / th;
    ca = (1.0 - std::cos(th)) / th;
  }
  return {sa * xi.x() - ca * xi.y(), ca * xi.x() + sa * xi.y(), th};
}

Transform3::Transform3(const Mat3& rotation, const Vec3& translation) : r_(rotation), t_(translation) {
  if ((r_.transpose() * r_ - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
      std::abs(r_.determinant() - 1.0) > 1e-9) {
    throw DomainError("Transform3: rotation is not orthonormal with det +1");
  }
}

Transform3 Transform3::from_matrix(const Mat4& m) {
  return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
}

Mat4 Transform3::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r_;
  m.topRightCorner<3, 1>() = t_;
  return m;
}

Transform3 Transform3::inverse() const {
  Transform3 out;
  out.r_ = r_.transpose();
  out.t_ = -(out.r_ * t_);
  return out;
}

Point3 transform_point(const Transform3& t, const Point3& p) { return t.apply(p); }

Transform3 compose(const Transform3& a, const Transform3& b) {
  Transform3 out = Transform3::from_matrix(a.matrix() * b.matrix());
  return out;
}

}  // namespace avm
