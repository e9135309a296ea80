#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <filesystem>
#include <random>

#include "avm/errors.hpp"
#include "avm/fusion.hpp"
#include "test_util.hpp"

using namespace avm;

namespace {

WheelSample wheel_at(double t, double v, double omega, double radius = 0.3, double track = 1.6) {
  // Inverse rear-axle kinematics; the front pair mirrors the rear.
  WheelSample s;
  s.t = t;
  s.radius = radius;
  s.track = track;
  const double wl = (v - omega * track / 2.0) / radius, wr = (v + omega * track / 2.0) / radius;
  s.rates = {wl, wr, wl, wr};
  return s;
}

bool psd(const Mat5& p) {
  if ((p - p.transpose()).cwiseAbs().maxCoeff() > 1e-9) return false;
  Eigen::SelfAdjointEigenSolver<Mat5> es(p);
  return es.eigenvalues().minCoeff() >= -1e-9;
}

}  // namespace

TEST_CASE("wheel_odometry_step") {
  WheelSample a, b;
  a.rates = {1, 1, 1, 1};
  b.t = 1.0;
  const auto st = wheel_odometry_step(a, b);
  CHECK(test::near_pose(st.delta, Pose2(0.3, 0, 0), 1e-12));
  CHECK(st.v == doctest::Approx(0.3));

  a.rates = {-1, 1, -1, 1};
  const auto spin = wheel_odometry_step(a, b);
  CHECK(std::hypot(spin.delta.x, spin.delta.y) < 1e-12);
  CHECK(spin.delta.yaw == doctest::Approx(0.3 * 2 / 1.6));

  // Arc against the circle: radius v/omega, chord angle omega*dt.
  const auto w = wheel_at(0.0, 2.0, 0.4);
  WheelSample w1 = w;
  w1.t = 0.5;
  const auto arc = wheel_odometry_step(w, w1);
  const double rho = 2.0 / 0.4, ang = 0.2;
  CHECK(arc.delta.x == doctest::Approx(rho * std::sin(ang)));
  CHECK(arc.delta.y == doctest::Approx(rho * (1 - std::cos(ang))));
  CHECK(arc.delta.yaw == doctest::Approx(ang));

  CHECK_THROWS_AS(wheel_odometry_step(w1, w), StreamError);
  CHECK_THROWS_AS(wheel_odometry_step(w, w), StreamError);
}

TEST_CASE("ekf_predict") {
  EkfState s;
  s.P.diagonal() << 0.01, 0.01, 0.01, 0.0, 0.0;
  Mat5 q = Mat5::Identity() * 1e-3;
  const auto still = ekf_predict(s, 0.5, q);
  CHECK(test::near_pose(still.pose, s.pose, 1e-15));
  // Zero twist: the pose block of F is identity, so P grows by Q there.
  CHECK((still.P.topLeftCorner<3, 3>() - (s.P + q).topLeftCorner<3, 3>()).norm() < 1e-15);

  s.v = 1.0;
  s.pose = Pose2(0, 0, std::numbers::pi / 2);
  const auto moved = ekf_predict(s, 1.0, Mat5::Zero());
  CHECK(moved.pose.x == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(moved.pose.y == doctest::Approx(1.0));
  CHECK(moved.t == 1.0);

  // Jacobian against central differences, including the near-straight regime.
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-2, 2);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    Vec5 x;
    x << u(rng), u(rng), u(rng), u(rng), (trial % 4 == 0 ? 1e-8 * u(rng) : u(rng));
    const double dt = 0.01 + 0.2 * std::abs(u(rng));
    const Mat5 f = motion_jacobian(x, dt);
    for (int j = 0; j < 5; ++j) {
      const double h = 1e-6;
      Vec5 xp = x, xm = x;
      xp(j) += h;
      xm(j) -= h;
      Vec5 d = motion_model(xp, dt) - motion_model(xm, dt);
      d(2) = wrap_angle(d(2));
      worst = std::max(worst, (d / (2 * h) - f.col(j)).cwiseAbs().maxCoeff());
    }
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("ekf_update") {
  EkfState s;
  s.v = 1.5;
  s.omega = 0.2;
  s.P = Mat5::Identity() * 0.04;
  const FusionWeights w;
  const FusionNoise n;

  // Zero innovation: mean unchanged, covariance shrinks.
  const auto m = wheel_measurement(wheel_at(0, 1.5, 0.2), n);
  const auto up = ekf_update(s, m, w);
  CHECK((up.vector() - s.vector()).norm() < 1e-12);
  CHECK(up.P(3, 3) < s.P(3, 3));
  CHECK(up.P(4, 4) < s.P(4, 4));

  // Scalar closed form on omega: K = P H / (H P H + R / w_imu).
  ImuSample imu;
  imu.yaw_rate = 0.5;
  const auto ui = ekf_update(s, imu_measurement(imu, n), w);
  const double r = n.imu_yaw_rate_sigma * n.imu_yaw_rate_sigma / w.w_imu;
  const double k = 0.04 / (0.04 + r);
  CHECK(ui.omega == doctest::Approx(0.2 + k * 0.3).epsilon(1e-12));
  CHECK(ui.P(4, 4) == doctest::Approx((1 - k) * 0.04).epsilon(1e-12));

  // IMU weight 0 disables the IMU: wheel then IMU equals wheel alone.
  const FusionWeights wheel_only{0.0, 1.0};
  const auto a = ekf_update(ekf_update(s, m, wheel_only), imu_measurement(imu, n), wheel_only);
  const auto b = ekf_update(s, m, wheel_only);
  CHECK((a.vector() - b.vector()).norm() == 0.0);
  CHECK((a.P - b.P).norm() == 0.0);

  // Singular innovation covariance.
  EkfState certain;
  Measurement degenerate = imu_measurement(imu, n);
  degenerate.R.setZero();
  CHECK_THROWS_AS(ekf_update(certain, degenerate, w), NumericalError);
}

TEST_CASE("covariance stays PSD through random predict/update sequences") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-1, 1);
  const FusionNoise n;
  EkfState s;
  s.P = Mat5::Identity() * 0.1;
  for (int i = 0; i < 2000; ++i) {
    const double dt = 0.01 * (1 + std::abs(u(rng)));
    s = ekf_predict(s, dt, process_noise(n, dt));
    REQUIRE(psd(s.P));
    if (i % 3 == 0) {
      s = ekf_update(s, wheel_measurement(wheel_at(s.t, 2 + u(rng), 0.3 * u(rng)), n), FusionWeights{});
    } else if (i % 3 == 1) {
      ImuSample imu;
      imu.yaw_rate = 0.3 * u(rng);
      s = ekf_update(s, imu_measurement(imu, n), FusionWeights{});
    } else {
      const Pose2 z(s.pose.x + 0.05 * u(rng), s.pose.y + 0.05 * u(rng), s.pose.yaw + 0.01 * u(rng));
      s = ekf_update(s, pose_measurement(z, Mat3::Identity() * 1e-3), FusionWeights{});
    }
    REQUIRE(psd(s.P));
  }
}

TEST_CASE("weights validation") {
  CHECK_THROWS_AS(validate(FusionWeights{0.6, 0.6}, FusionMode{}), ConfigError);
  CHECK_THROWS_AS(validate(FusionWeights{1.2, -0.2}, FusionMode{}), ConfigError);
  CHECK_NOTHROW(validate(FusionWeights{0.6, 0.6}, FusionMode{true, false}));
  CHECK_THROWS_AS(validate(FusionWeights{}, FusionMode{false, false}), ConfigError);
}

TEST_CASE("weight complementarity") {
  // Wheel says omega 0.1, IMU says 0.2; the fused rate moves towards the IMU
  // monotonically as its weight grows.
  const FusionNoise n;
  ImuSample imu;
  imu.yaw_rate = 0.2;
  const auto wm = wheel_measurement(wheel_at(0, 1.0, 0.1), n);
  double prev = -1.0;
  for (double wi : {0.0, 0.25, 0.5, 0.75, 0.95, 0.999999}) {
    EkfState s;
    s.P = Mat5::Identity();
    const FusionWeights fw{wi, 1.0 - wi};
    s = ekf_update(ekf_update(s, wm, fw), imu_measurement(imu, n), fw);
    CHECK(s.omega > prev);
    prev = s.omega;
  }
  CHECK(prev == doctest::Approx(0.2).epsilon(1e-3));
}

TEST_CASE("noise-free fusion tracks the true trajectory") {
  FusionConfig cfg;
  cfg.noise.wheel_speed_sigma = 1e-7;
  cfg.noise.wheel_yaw_rate_sigma = 1e-7;
  cfg.noise.imu_yaw_rate_sigma = 1e-7;
  cfg.noise.pose_density = 0.0;
  PosePredictor pred(cfg);

  // Piecewise-constant twist, changing at sample times.
  auto twist = [](int k) { return std::pair{1.0 + 0.5 * std::sin(0.1 * k), 0.3 * std::cos(0.07 * k)}; };
  const double dt = 0.01;
  EkfState init;
  init.v = twist(0).first;
  init.omega = twist(0).second;
  init.P.diagonal() << 1e-12, 1e-12, 1e-12, 1e-12, 1e-12;
  pred.reset(init);

  Pose2 truth;
  for (int k = 1; k <= 100; ++k) {
    const auto [v0, w0] = twist(k - 1);
    truth = compose(truth, integrate_twist(v0, w0, dt));
    const auto [v, w] = twist(k);
    pred.ingest_wheel(wheel_at(k * dt, v, w));
    ImuSample imu;
    imu.t = k * dt;
    imu.yaw_rate = w;
    pred.ingest_imu(imu);
  }
  const auto est = pred.snapshot();
  INFO((est.pose.x - truth.x), " ", (est.pose.y - truth.y), " ", (est.pose.yaw - truth.yaw));
  CHECK(test::near_pose(est.pose, truth, 1e-6));
}

TEST_CASE("predict_pose_at") {
  PosePredictor pred;
  CHECK_THROWS_AS(pred.predict_pose_at(0.0), QueryError);
  EkfState s;
  s.t = 2.0;
  s.v = 1.2;
  s.omega = 0.3;
  s.P = Mat5::Identity() * 1e-4;
  pred.reset(s);
  CHECK(test::near_pose(pred.predict_pose_at(2.0).pose, s.pose, 0.0));
  const auto ahead = pred.predict_pose_at(3.0);
  CHECK(test::near_pose(ahead.pose, integrate_twist(1.2, 0.3, 1.0), 1e-12));

  EkfState chained = s;
  for (int i = 0; i < 100; ++i) chained = ekf_predict(chained, 0.01, Mat5::Zero());
  CHECK(test::near_pose(ahead.pose, chained.pose, 1e-6));
  CHECK_THROWS_AS(pred.predict_pose_at(1.0), QueryError);
  // Querying never commits.
  CHECK(pred.snapshot().t == 2.0);
}

TEST_CASE("interpolate and initialize") {
  std::vector<ImuSample> imu(2);
  imu[0].t = 1.0;
  imu[0].yaw_rate = 0.1;
  imu[1].t = 2.0;
  imu[1].yaw_rate = 0.3;
  CHECK(interpolate(std::span<const ImuSample>(imu), 1.5).yaw_rate == doctest::Approx(0.2));
  CHECK_THROWS_AS(interpolate(std::span<const ImuSample>(imu), 2.5), QueryError);

  auto frames_at = [](std::vector<double> ts) {
    std::deque<SemanticFrame> q;
    for (std::size_t i = 0; i < ts.size(); ++i) q.emplace_back(ts[i], i, std::vector<LabeledPoint>{});
    return q;
  };
  std::vector<WheelSample> wheel;
  for (int i = 0; i <= 100; ++i) wheel.push_back(wheel_at(0.01 * i, 1.0, 0.0));
  std::vector<ImuSample> imu_late;
  for (int i = 25; i <= 100; ++i) {
    ImuSample s;
    s.t = 0.01 * i;
    s.yaw_rate = 0.1;
    imu_late.push_back(s);
  }

  // All data spans the first frame.
  auto q = frames_at({0.05, 0.15, 0.25, 0.35});
  std::vector<ImuSample> imu_all;
  for (int i = 0; i <= 100; ++i) {
    ImuSample s;
    s.t = 0.01 * i;
    imu_all.push_back(s);
  }
  auto r = initialize(q, wheel, imu_all, FusionConfig{});
  REQUIRE(r);
  CHECK(r->t0 == 0.05);
  CHECK(r->dropped_frames == 0);
  CHECK(test::near_pose(r->state.pose, Pose2::identity(), 0.0));
  CHECK(r->state.v == doctest::Approx(1.0));

  // IMU starts after the first two frames: both are dropped.
  q = frames_at({0.05, 0.15, 0.25, 0.35});
  r = initialize(q, wheel, imu_late, FusionConfig{});
  REQUIRE(r);
  CHECK(r->t0 == 0.25);
  CHECK(r->dropped_frames == 2);
  CHECK(q.front().timestamp() == 0.25);
  CHECK(r->state.omega == doctest::Approx(0.7 * 0.1));

  // Wheel-only mode ignores the late IMU.
  q = frames_at({0.05, 0.15});
  FusionConfig wheel_cfg;
  wheel_cfg.mode.use_imu = false;
  r = initialize(q, wheel, imu_late, wheel_cfg);
  REQUIRE(r);
  CHECK(r->t0 == 0.05);

  // No sample after the frame yet: not ready, frame kept.
  q = frames_at({1.5});
  CHECK(!initialize(q, wheel, imu_all, FusionConfig{}).has_value());
  CHECK(q.size() == 1);
}

TEST_CASE("preintegrate") {
  FusionConfig cfg;
  PreintegrationNoise noise;
  noise.differential_scale_sigma = 0.0;  // white terms only; the bias terms are correlated
  noise.common_scale_sigma = 0.0;

  const auto still = preintegrate({}, {}, 0.0, 1.0, cfg, noise);
  CHECK(test::near_pose(still.delta, Pose2::identity(), 0.0));
  CHECK(still.cov(0, 0) == doctest::Approx(noise.long_sigma * noise.long_sigma));
  CHECK(still.cov(1, 1) == doctest::Approx(noise.lat_sigma * noise.lat_sigma));
  CHECK(still.cov(2, 2) == doctest::Approx(noise.yaw_sigma * noise.yaw_sigma));

  std::vector<WheelSample> wheel;
  std::vector<ImuSample> imu;
  for (int i = 0; i <= 100; ++i) {
    wheel.push_back(wheel_at(0.01 * i, 2.0, 0.0));
    ImuSample s;
    s.t = 0.01 * i;
    imu.push_back(s);
  }
  const auto straight = preintegrate(wheel, imu, 0.0, 0.5, cfg, noise);
  CHECK(test::near_pose(straight.delta, Pose2(1.0, 0, 0), 1e-12));
  CHECK(straight.duration == 0.5);

  // Varying motion: splitting the interval composes to the whole.
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(-1, 1);
  wheel.clear();
  imu.clear();
  for (int i = 0; i <= 300; ++i) {
    const double t = 0.01 * i + 0.003 * u(rng);
    wheel.push_back(wheel_at(t, 2.0 + u(rng), 0.4 * u(rng)));
    ImuSample s;
    s.t = t + 0.004;
    s.yaw_rate = 0.4 * u(rng);
    imu.push_back(s);
  }
  const auto whole = preintegrate(wheel, imu, 0.2, 2.7, cfg, noise);
  Eigen::SelfAdjointEigenSolver<Mat3> es(whole.cov);
  CHECK(es.eigenvalues().minCoeff() > 0.0);
  for (double tm : {0.2001, 0.93, 1.5, 2.4567}) {
    const auto first = preintegrate(wheel, imu, 0.2, tm, cfg, noise);
    const auto second = preintegrate(wheel, imu, tm, 2.7, cfg, noise);
    CHECK(test::near_pose(compose(first.delta, second.delta), whole.delta, 1e-9));
    // First-order propagation of the two halves reproduces the whole.
    const Mat3 ja = compose_jacobian_a(first.delta, second.delta), jb = compose_jacobian_b(first.delta);
    const Mat3 cov = ja * first.cov * ja.transpose() + jb * second.cov * jb.transpose();
    CHECK((cov - whole.cov).norm() < 1e-3 * whole.cov.norm());
  }

  // Constant differential scale error on a straight run: the yaw error is
  // w_wheel * v * delta * T / track, so its variance grows with T^2.
  {
    PreintegrationNoise biased;
    biased.long_sigma = biased.lat_sigma = biased.yaw_sigma = biased.scale_sigma = 1e-12;
    biased.common_scale_sigma = 0.0;
    std::vector<WheelSample> w;
    std::vector<ImuSample> m;
    for (int i = 0; i <= 500; ++i) {
      w.push_back(wheel_at(0.01 * i, 2.0, 0.0));
      ImuSample s;
      s.t = 0.01 * i;
      m.push_back(s);
    }
    for (double T : {1.0, 4.0}) {
      const auto p = preintegrate(w, m, 0.0, T, cfg, biased);
      const double sy = cfg.weights.w_wheel * 2.0 * biased.differential_scale_sigma * T / w[0].track;
      CHECK(std::sqrt(p.cov(2, 2)) == doctest::Approx(sy).epsilon(1e-6));
      // Lateral error integrates the yaw error: v * T / 2 times it.
      CHECK(std::sqrt(p.cov(1, 1)) == doctest::Approx(sy * 2.0 * T / 2.0).epsilon(1e-3));
    }
  }

  // Constant mean scale error on a straight run: distance error sigma * v * T.
  {
    PreintegrationNoise common;
    common.long_sigma = common.lat_sigma = common.yaw_sigma = common.scale_sigma = 1e-12;
    common.differential_scale_sigma = 0.0;
    std::vector<WheelSample> w;
    for (int i = 0; i <= 500; ++i) w.push_back(wheel_at(0.01 * i, 2.0, 0.0));
    for (double T : {1.0, 4.0}) {
      const auto p = preintegrate(w, {}, 0.0, T, cfg, common);
      CHECK(std::sqrt(p.cov(0, 0)) == doctest::Approx(common.common_scale_sigma * 2.0 * T).epsilon(1e-6));
      CHECK(p.cov(1, 1) < 1e-20);
    }
  }

  // Compose Jacobians against finite differences.
  const Pose2 a(0.4, -1.0, 0.7), b(1.2, 0.3, -0.4);
  const Mat3 ja = compose_jacobian_a(a, b), jb = compose_jacobian_b(a);
  for (int j = 0; j < 3; ++j) {
    Vec3 e = Vec3::Zero();
    e(j) = 1e-6;
    auto bump = [](const Pose2& p, const Vec3& d) { return Pose2(p.x + d(0), p.y + d(1), p.yaw + d(2)); };
    auto diff = [](const Pose2& p, const Pose2& q) { return Vec3(p.x - q.x, p.y - q.y, wrap_angle(p.yaw - q.yaw)); };
    const Vec3 da = diff(compose(bump(a, e), b), compose(bump(a, -e), b)) / 2e-6;
    const Vec3 db = diff(compose(a, bump(b, e)), compose(a, bump(b, -e))) / 2e-6;
    CHECK((da - ja.col(j)).norm() < 1e-6);
    CHECK((db - jb.col(j)).norm() < 1e-6);
  }
}

TEST_CASE("sensor file round trip") {
  std::vector<WheelSample> wheel = {wheel_at(0.0, 1.0, 0.1), wheel_at(0.01, 1.1, 0.2)};
  std::vector<ImuSample> imu(2);
  imu[1].t = 0.01;
  imu[1].yaw_rate = -0.25;
  imu[1].accel = Vec2(0.5, -0.1);
  const auto dir = std::filesystem::temp_directory_path();
  write_wheel(dir / "avm_w.txt", wheel);
  write_imu(dir / "avm_i.txt", imu);
  const auto wb = read_wheel(dir / "avm_w.txt");
  const auto ib = read_imu(dir / "avm_i.txt");
  REQUIRE(wb.size() == 2);
  REQUIRE(ib.size() == 2);
  CHECK(wb[1].rates == wheel[1].rates);
  CHECK(ib[1].yaw_rate == imu[1].yaw_rate);
  CHECK(ib[1].accel == imu[1].accel);
  std::filesystem::remove(dir / "avm_w.txt");
  std::filesystem::remove(dir / "avm_i.txt");
}
