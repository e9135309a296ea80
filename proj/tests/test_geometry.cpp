#include <doctest.h>

#include "avm/errors.hpp"
#include "avm/geometry.hpp"
#include "test_util.hpp"

using namespace avm;
using avm::test::near_pose;

namespace {

constexpr double kPi = std::numbers::pi;

// Homogeneous-matrix oracle for SE(2) composition.
Pose2 compose_by_matrix(const Pose2& a, const Pose2& b) {
  Mat3 ma, mb;
  ma << std::cos(a.yaw), -std::sin(a.yaw), a.x, std::sin(a.yaw), std::cos(a.yaw), a.y, 0, 0, 1;
  mb << std::cos(b.yaw), -std::sin(b.yaw), b.x, std::sin(b.yaw), std::cos(b.yaw), b.y, 0, 0, 1;
  const Mat3 m = ma * mb;
  return {m(0, 2), m(1, 2), std::atan2(m(1, 0), m(0, 0))};
}

}  // namespace

TEST_CASE("wrap_angle maps into (-pi, pi]") {
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3 * kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(2 * kPi + 0.25) == doctest::Approx(0.25));
  CHECK(wrap_angle(-0.5) == -0.5);
}

TEST_CASE("compose") {
  const Pose2 p(1.5, -2.0, 0.3);
  CHECK(near_pose(compose(Pose2::identity(), p), p, 0.0));
  CHECK(near_pose(compose(Pose2(1, 0, kPi / 2), Pose2(1, 0, 0)), Pose2(1, 1, kPi / 2), 1e-12));

  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    const Pose2 a = test::random_pose(rng), b = test::random_pose(rng);
    const Pose2 c = compose(a, b);
    CHECK(near_pose(c, compose_by_matrix(a, b), 1e-9));
    CHECK(c.yaw > -kPi);
    CHECK(c.yaw <= kPi);
  }
}

TEST_CASE("between and inverse") {
  std::mt19937_64 rng(11);
  const Pose2 p(0.2, 4.0, -2.9);
  CHECK(near_pose(between(p, p), Pose2::identity(), 1e-12));
  CHECK(near_pose(between(Pose2::identity(), p), p, 1e-12));
  for (int i = 0; i < 500; ++i) {
    const Pose2 a = test::random_pose(rng), b = test::random_pose(rng), c = test::random_pose(rng);
    CHECK(near_pose(compose(a, between(a, b)), b, 1e-9));
    CHECK(near_pose(between(a, b), compose(inverse(a), b), 1e-9));
    CHECK(near_pose(compose(a, inverse(a)), Pose2::identity(), 1e-9));
    CHECK(near_pose(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9));
    const Pose2 inv = inverse(a);
    CHECK(inv.yaw > -kPi);
    CHECK(inv.yaw <= kPi);
  }
}

TEST_CASE("integrate_twist matches the circle-arc closed form") {
  const double v = 2.0, w = 0.5, dt = 1.2;
  const Pose2 d = integrate_twist(v, w, dt);
  const double r = v / w;
  CHECK(d.x == doctest::Approx(r * std::sin(w * dt)));
  CHECK(d.y == doctest::Approx(r - r * std::cos(w * dt)));
  CHECK(d.yaw == doctest::Approx(w * dt));
  const Pose2 s = integrate_twist(1.0, 0.0, 2.0);
  CHECK(near_pose(s, Pose2(2.0, 0.0, 0.0), 1e-15));
}

TEST_CASE("SE(2) log/exp round trip") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const Pose2 p = test::random_pose(rng, 5.0);
    CHECK(near_pose(exp_se2(log_se2(p)), p, 1e-9));
  }
  const Vec3 xi = log_se2(Pose2(0.1, 0.0, 0.0));
  CHECK(xi.x() == doctest::Approx(0.1));
  CHECK(xi.y() == doctest::Approx(0.0));
}

TEST_CASE("transform_point") {
  const Point3 p(0.3, -1.2, 1.0);
  CHECK((transform_point(Transform3::identity(), p) - p).norm() == 0.0);
  const Transform3 down(Mat3::Identity(), Vec3(0, 0, -1));
  CHECK(transform_point(down, p).z() == 0.0);

  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-5, 5);
  for (int i = 0; i < 200; ++i) {
    const Transform3 t(test::random_rotation(rng), Vec3(u(rng), u(rng), u(rng)));
    const Point3 a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng));
    const Eigen::Vector4d h = t.matrix() * Eigen::Vector4d(a.x(), a.y(), a.z(), 1.0);
    CHECK((transform_point(t, a) - h.head<3>()).norm() < 1e-9);
    CHECK(std::abs((transform_point(t, a) - transform_point(t, b)).norm() - (a - b).norm()) < 1e-9);
    CHECK((transform_point(t.inverse(), transform_point(t, a)) - a).norm() < 1e-9);
  }
}

TEST_CASE("Transform3 rejects non-rotations") {
  Mat3 r = Mat3::Identity();
  r(0, 0) = -1.0;  // reflection
  CHECK_THROWS_AS(Transform3(r, Vec3::Zero()), DomainError);
  CHECK_THROWS_AS(Transform3(2.0 * Mat3::Identity(), Vec3::Zero()), DomainError);
}
