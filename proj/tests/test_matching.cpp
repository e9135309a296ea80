#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <random>

#include "avm/errors.hpp"
#include "avm/matching.hpp"
#include "test_util.hpp"

using namespace avm;

namespace {

std::vector<LabeledPoint> scattered(std::mt19937_64& rng, int n, double half) {
  std::uniform_real_distribution<double> u(-half, half);
  std::uniform_int_distribution<int> l(0, 3);
  std::vector<LabeledPoint> pts;
  for (int i = 0; i < n; ++i) pts.push_back({Point3(u(rng), u(rng), 0), label_from_id(l(rng))});
  return pts;
}

std::vector<LabeledPoint> moved(const std::vector<LabeledPoint>& pts, const Pose2& t) {
  std::vector<LabeledPoint> out;
  for (const auto& p : pts) {
    const Vec2 q = t.apply(p.xy());
    out.push_back({Point3(q.x(), q.y(), 0), p.label});
  }
  return out;
}

double sum_sq(const Pose2& t, const std::vector<Vec2>& p, const std::vector<Vec2>& q) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (t.apply(p[i]) - q[i]).squaredNorm();
  return s;
}

IcpConfig fine_config() {
  IcpConfig cfg;
  cfg.eps_translation = 1e-9;
  cfg.eps_rotation = 1e-9;
  cfg.max_iterations = 100;
  return cfg;
}

constexpr double kDeg = std::numbers::pi / 180.0;

}  // namespace

TEST_CASE("rigid_align_2d") {
  const std::vector<Vec2> p = {{0, 0}, {1, 0}, {0, 2}, {3, 1}};
  CHECK(test::near_pose(rigid_align_2d(p, p), Pose2::identity(), 1e-12));

  std::vector<Vec2> shifted;
  for (const auto& x : p) shifted.push_back(x + Vec2(0.5, -1.5));
  CHECK(test::near_pose(rigid_align_2d(p, shifted), Pose2(0.5, -1.5, 0), 1e-12));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-5, 5);
  std::normal_distribution<double> noise(0, 0.05);
  for (int trial = 0; trial < 20; ++trial) {
    const Pose2 t = test::random_pose(rng, 5.0);
    std::vector<Vec2> src, dst, noisy;
    for (int i = 0; i < 50; ++i) {
      src.emplace_back(u(rng), u(rng));
      dst.push_back(t.apply(src.back()));
      noisy.push_back(dst.back() + Vec2(noise(rng), noise(rng)));
    }
    CHECK(test::near_pose(rigid_align_2d(src, dst), t, 1e-10));

    // With noise, no pose on a fine grid around the estimate does better.
    const Pose2 est = rigid_align_2d(src, noisy);
    const double best = sum_sq(est, src, noisy);
    for (int i = -2; i <= 2; ++i)
      for (int j = -2; j <= 2; ++j)
        for (int k = -2; k <= 2; ++k) {
          const Pose2 g(est.x + 1e-3 * i, est.y + 1e-3 * j, est.yaw + 1e-4 * k);
          CHECK(sum_sq(g, src, noisy) >= best - 1e-12);
        }
  }

  const std::vector<Vec2> same = {{1, 1}, {1, 1}, {1, 1}};
  CHECK_THROWS_AS(rigid_align_2d(same, std::span(p).subspan(0, 3)), DegenerateError);
  CHECK_THROWS_AS(rigid_align_2d(std::span(p).subspan(0, 1), std::span(p).subspan(0, 1)), DegenerateError);
}

TEST_CASE("icp_register recovers constructed transforms") {
  std::mt19937_64 rng(5);
  const auto src = scattered(rng, 400, 4.0);
  const TargetCloud self(src, 0.5);

  const auto id = icp_register(src, self, Pose2::identity(), fine_config());
  CHECK(id.converged);
  CHECK(test::near_pose(id.transform, Pose2::identity(), 1e-9));
  CHECK(id.rms_residual < 1e-9);

  // Subset of the target still lands on it.
  const std::vector<LabeledPoint> subset(src.begin(), src.begin() + 200);
  CHECK(test::near_pose(icp_register(subset, self, Pose2::identity(), fine_config()).transform, Pose2::identity(),
                        1e-9));

  const Pose2 truth(0.3, -0.2, 5 * kDeg);
  const TargetCloud target(moved(src, truth), 0.5);
  const auto r = icp_register(src, target, Pose2::identity(), fine_config());
  CHECK(r.converged);
  CHECK(test::near_pose(r.transform, truth, 1e-4));
  CHECK(r.inlier_fraction == doctest::Approx(1.0));
  CHECK(!r.used_cross_label_pairs);

  for (std::size_t i = 1; i < r.cost_history.size(); ++i) CHECK(r.cost_history[i] <= r.cost_history[i - 1] + 1e-12);
}

TEST_CASE("icp cost is monotone on noisy partial overlap") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> noise(0, 0.03);
  for (int trial = 0; trial < 20; ++trial) {
    auto src = scattered(rng, 300, 5.0);
    auto tgt = moved(src, test::random_pose(rng, 0.3, 4 * kDeg));
    tgt.resize(200);
    for (auto& p : tgt) p.p += Point3(noise(rng), noise(rng), 0);
    const auto extra = scattered(rng, 50, 6.0);
    tgt.insert(tgt.end(), extra.begin(), extra.end());
    const auto r = icp_register(src, TargetCloud(tgt, 0.5), Pose2::identity(), IcpConfig{});
    REQUIRE(!r.cost_history.empty());
    for (std::size_t i = 1; i < r.cost_history.size(); ++i) CHECK(r.cost_history[i] <= r.cost_history[i - 1] + 1e-12);
    CHECK(r.rms_residual >= 0.0);
    CHECK(r.inlier_fraction >= 0.0);
    CHECK(r.inlier_fraction <= 1.0);
  }
}

TEST_CASE("staged icp chains single registrations") {
  std::mt19937_64 rng(8);
  const auto src = scattered(rng, 300, 5.0);
  const Pose2 truth(-0.4, 0.25, -7 * kDeg);
  const TargetCloud target(moved(src, truth), 0.5);
  const std::vector<double> radii{1.5, 0.5};
  const auto stages = icp_register_stages(src, target, Pose2::identity(), fine_config(), radii);
  REQUIRE(stages.size() == 2);

  IcpConfig c = fine_config();
  c.correspondence_radius = 1.5;
  const auto first = icp_register(src, target, Pose2::identity(), c);
  c.correspondence_radius = 0.5;
  const auto second = icp_register(src, target, first.transform, c);
  CHECK(test::near_pose(stages[0].transform, first.transform, 0.0));
  CHECK(test::near_pose(stages[1].transform, second.transform, 0.0));
  CHECK(test::near_pose(stages[1].transform, truth, 1e-6));
  for (const auto& s : stages) {
    for (std::size_t i = 1; i < s.cost_history.size(); ++i) CHECK(s.cost_history[i] <= s.cost_history[i - 1] + 1e-12);
  }

  // No overlap ends the sequence after the first stage.
  const TargetCloud far(moved(src, Pose2(100, 0, 0)), 0.5);
  CHECK(icp_register_stages(src, far, Pose2::identity(), fine_config(), radii).size() == 1);
  CHECK_THROWS_AS(icp_register_stages(src, target, Pose2::identity(), fine_config(), {}), ConfigError);
}

TEST_CASE("icp equivariance under a shared rotation") {
  std::mt19937_64 rng(7);
  const auto src = scattered(rng, 300, 4.0);
  const Pose2 truth(0.2, 0.1, 3 * kDeg);
  const auto tgt = moved(src, truth);
  const auto base = icp_register(src, TargetCloud(tgt, 0.5), Pose2::identity(), fine_config());
  const Pose2 rot(0, 0, 0.8);
  const auto rotated =
      icp_register(moved(src, rot), TargetCloud(moved(tgt, rot), 0.5), Pose2::identity(), fine_config());
  CHECK(test::near_pose(rotated.transform, compose(compose(rot, base.transform), inverse(rot)), 1e-6));
}

TEST_CASE("label strictness") {
  std::mt19937_64 rng(8);
  auto lanes = scattered(rng, 100, 3.0);
  for (auto& p : lanes) p.label = SemanticLabel::LaneLine;
  auto spots = lanes;
  for (auto& p : spots) p.label = SemanticLabel::ParkingSpot;

  const auto r = icp_register(lanes, TargetCloud(spots, 0.5), Pose2::identity(), IcpConfig{});
  CHECK(!r.converged);
  CHECK(r.inlier_count == 0);
  CHECK(!r.used_cross_label_pairs);

  IcpConfig loose;
  loose.label_strict = false;
  const auto l = icp_register(lanes, TargetCloud(spots, 0.5), Pose2::identity(), loose);
  CHECK(l.used_cross_label_pairs);
  CHECK(l.converged);

  CHECK(!icp_register(lanes, TargetCloud(), Pose2::identity(), IcpConfig{}).converged);
  IcpConfig bad;
  bad.correspondence_radius = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("information reflects degenerate structure") {
  // Points along a single lane line: no constraint along the line.
  std::vector<LabeledPoint> line;
  for (double x = -5; x <= 5; x += 0.1) line.push_back({Point3(x, 0, 0), SemanticLabel::LaneLine});
  const auto r = icp_register(line, TargetCloud(line, 0.5), Pose2::identity(), IcpConfig{});
  const Mat3 info = r.information;
  CHECK(info(1, 1) > 1e3 * std::max(info(0, 0), 1e-12));

  std::mt19937_64 rng(9);
  const auto rich = scattered(rng, 400, 4.0);
  const auto rr = icp_register(rich, TargetCloud(rich, 0.5), Pose2::identity(), IcpConfig{});
  Eigen::SelfAdjointEigenSolver<Mat3> es(rr.information);
  CHECK(es.eigenvalues().minCoeff() > 0.0);

  const Mat3 floored = floor_information(info, 1e6);
  Eigen::SelfAdjointEigenSolver<Mat3> ef(floored);
  CHECK(ef.eigenvalues().maxCoeff() / ef.eigenvalues().minCoeff() <= 1e6 * (1 + 1e-9));
  const Mat3 cov = information_to_covariance(info);
  CHECK((cov * floored - Mat3::Identity()).norm() < 1e-6);

  // Body-frame re-expression: the constrained direction follows the pose.
  const Pose2 pose(1.0, 2.0, std::numbers::pi / 2);
  const Mat3 body = information_in_body_frame(info, pose);
  Mat3 g = Mat3::Identity();
  g.topLeftCorner<2, 2>() = pose.rotation();
  CHECK((body - g.transpose() * info * g).norm() < 1e-9);
  CHECK(body(0, 0) > 1e3 * std::max(body(1, 1), 1e-12));
}
