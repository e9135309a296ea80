#include "avm/fusion.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "avm/errors.hpp"

namespace avm {

BodyTwist wheel_twist(const WheelSample& s) {
  const double wl = s.rates[2], wr = s.rates[3];
  return {s.radius * (wl + wr) / 2.0, s.radius * (wr - wl) / s.track};
}

BodyTwist front_wheel_twist(const WheelSample& s) {
  const double wl = s.rates[0], wr = s.rates[1];
  return {s.radius * (wl + wr) / 2.0, s.radius * (wr - wl) / s.track};
}

WheelStep wheel_odometry_step(const WheelSample& prev, const WheelSample& next) {
  if (!(next.t > prev.t)) throw StreamError("wheel_odometry_step: timestamps must strictly increase");
  if (!(prev.radius > 0) || !(prev.track > 0)) throw StreamError("wheel_odometry_step: radius/track must be positive");
  const BodyTwist tw = wheel_twist(prev);
  return {integrate_twist(tw.v, tw.omega, next.t - prev.t), tw.v, tw.omega};
}

Vec5 EkfState::vector() const {
  Vec5 x;
  x << pose.x, pose.y, pose.yaw, v, omega;
  return x;
}

EkfState EkfState::from_vector(double t, const Vec5& x, const Mat5& P) {
  EkfState s;
  s.t = t;
  s.pose = Pose2(x(0), x(1), x(2));
  s.v = x(3);
  s.omega = x(4);
  s.P = P;
  return s;
}

void validate(const FusionWeights& w, const FusionMode& mode) {
  if (w.w_imu < 0 || w.w_imu > 1 || w.w_wheel < 0 || w.w_wheel > 1) {
    throw ConfigError("fusion weights must lie in [0, 1]");
  }
  if (mode.use_imu && mode.use_wheel && std::abs(w.w_imu + w.w_wheel - 1.0) > 1e-9) {
    throw ConfigError("fusion weights must sum to 1 when both sensors are enabled");
  }
  if (!mode.use_imu && !mode.use_wheel) throw ConfigError("fusion mode must select at least one sensor");
}

namespace {

// d/da of sin(a)/a.
double sinc_derivative(double a) {
  if (std::abs(a) < 1e-3) return -a / 3.0 + a * a * a / 30.0;
  return (a * std::cos(a) - std::sin(a)) / (a * a);
}

}  // namespace

// Arc written through its chord: heading th + w dt / 2, length v dt sinc(w dt / 2).
// Stable for any w, including w -> 0.
Vec5 motion_model(const Vec5& x, double dt) {
  const double th = x(2), v = x(3), w = x(4);
  const double a = 0.5 * w * dt, m = th + a;
  const double chord = v * dt * sinc(a);
  Vec5 out = x;
  out(0) += chord * std::cos(m);
  out(1) += chord * std::sin(m);
  out(2) = wrap_angle(th + w * dt);
  return out;
}

Mat5 motion_jacobian(const Vec5& x, double dt) {
  const double th = x(2), v = x(3), w = x(4);
  const double a = 0.5 * w * dt, m = th + a;
  const double cm = std::cos(m), sm = std::sin(m), s = sinc(a), ds = sinc_derivative(a);
  Mat5 f = Mat5::Identity();
  f(0, 2) = -v * dt * sm * s;
  f(1, 2) = v * dt * cm * s;
  f(0, 3) = dt * cm * s;
  f(1, 3) = dt * sm * s;
  f(0, 4) = v * dt * 0.5 * dt * (-sm * s + cm * ds);
  f(1, 4) = v * dt * 0.5 * dt * (cm * s + sm * ds);
  f(2, 4) = dt;
  return f;
}

namespace {

Mat5 symmetrize(const Mat5& p) { return 0.5 * (p + p.transpose()); }

}  // namespace

EkfState ekf_predict(const EkfState& state, double dt, const Mat5& Q) {
  const Vec5 x = state.vector();
  const Mat5 f = motion_jacobian(x, dt);
  return EkfState::from_vector(state.t + dt, motion_model(x, dt), symmetrize(f * state.P * f.transpose() + Q));
}

EkfState ekf_update(const EkfState& state, const Measurement& m, const FusionWeights& weights) {
  double scale = 1.0;
  if (m.sensor == SensorKind::Imu) {
    if (weights.w_imu <= 0.0) return state;
    scale = 1.0 / weights.w_imu;
  } else if (m.sensor == SensorKind::Wheel) {
    if (weights.w_wheel <= 0.0) return state;
    scale = 1.0 / weights.w_wheel;
  }
  const Eigen::MatrixXd& H = m.H;
  const Eigen::MatrixXd R = m.R * scale;
  const Vec5 x = state.vector();
  Eigen::VectorXd innov = m.z - H * x;
  for (int r : m.angle_rows) innov(r) = wrap_angle(innov(r));

  const Eigen::MatrixXd S = H * state.P * H.transpose() + R;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (S + S.transpose()));
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (!(lo > 1e-300) || hi / lo > 1e15) {
    throw NumericalError("ekf_update: singular innovation covariance (condition " +
                         std::to_string(lo > 0 ? hi / lo : INFINITY) + ")");
  }
  const Eigen::MatrixXd K = state.P * H.transpose() * S.inverse();
  const Vec5 xn = x + K * innov;
  // Joseph form of (I - K H) P: identical in exact arithmetic, stays PSD.
  const Mat5 ikh = Mat5::Identity() - K * H;
  const Mat5 P = ikh * state.P * ikh.transpose() + K * R * K.transpose();
  return EkfState::from_vector(state.t, xn, symmetrize(P));
}

Mat5 process_noise(const FusionNoise& n, double dt) {
  Mat5 q = Mat5::Zero();
  q(0, 0) = q(1, 1) = q(2, 2) = n.pose_density * dt;
  q(3, 3) = n.accel_density * dt;
  q(4, 4) = n.yaw_accel_density * dt;
  return q;
}

Measurement wheel_measurement(const WheelSample& s, const FusionNoise& n) {
  const BodyTwist tw = wheel_twist(s);
  Measurement m;
  m.sensor = SensorKind::Wheel;
  m.z = Eigen::Vector2d(tw.v, tw.omega);
  m.H = Eigen::MatrixXd::Zero(2, 5);
  m.H(0, 3) = 1.0;
  m.H(1, 4) = 1.0;
  m.R = Eigen::Vector2d(n.wheel_speed_sigma * n.wheel_speed_sigma, n.wheel_yaw_rate_sigma * n.wheel_yaw_rate_sigma)
            .asDiagonal();
  return m;
}

Measurement imu_measurement(const ImuSample& s, const FusionNoise& n) {
  Measurement m;
  m.sensor = SensorKind::Imu;
  m.z = Eigen::VectorXd::Constant(1, s.yaw_rate);
  m.H = Eigen::MatrixXd::Zero(1, 5);
  m.H(0, 4) = 1.0;
  m.R = Eigen::MatrixXd::Constant(1, 1, n.imu_yaw_rate_sigma * n.imu_yaw_rate_sigma);
  return m;
}

Measurement pose_measurement(const Pose2& z, const Mat3& cov) {
  Measurement m;
  m.sensor = SensorKind::Visual;
  m.z = Eigen::Vector3d(z.x, z.y, z.yaw);
  m.H = Eigen::MatrixXd::Zero(3, 5);
  m.H(0, 0) = m.H(1, 1) = m.H(2, 2) = 1.0;
  m.R = cov;
  m.angle_rows = {2};
  return m;
}

// ---------------------------------------------------------- PosePredictor

PosePredictor::PosePredictor(FusionConfig cfg) : cfg_(std::move(cfg)) { validate(cfg_.weights, cfg_.mode); }

void PosePredictor::reset(const EkfState& initial) {
  std::unique_lock lock(mu_);
  state_ = initial;
  initialized_ = true;
}

bool PosePredictor::initialized() const {
  std::shared_lock lock(mu_);
  return initialized_;
}

void PosePredictor::predict_locked(double t) {
  if (t < state_.t) throw StreamError("PosePredictor: sample older than filter time");
  const double dt = t - state_.t;
  if (dt <= 0.0) return;
  state_ = ekf_predict(state_, dt, process_noise(cfg_.noise, dt));
  if (cfg_.use_accelerometer) state_.v += last_accel_ * dt;
}

void PosePredictor::ingest_wheel(const WheelSample& s) {
  std::unique_lock lock(mu_);
  if (!initialized_) throw StreamError("PosePredictor: not initialized");
  predict_locked(s.t);
  if (!cfg_.mode.use_wheel) return;
  state_ = ekf_update(state_, wheel_measurement(s, cfg_.noise), cfg_.weights);
}

void PosePredictor::ingest_imu(const ImuSample& s) {
  std::unique_lock lock(mu_);
  if (!initialized_) throw StreamError("PosePredictor: not initialized");
  predict_locked(s.t);
  last_accel_ = s.accel.x();
  if (!cfg_.mode.use_imu) return;
  state_ = ekf_update(state_, imu_measurement(s, cfg_.noise), cfg_.weights);
}

void PosePredictor::update_pose(double t, const Pose2& z, const Mat3& cov) {
  std::unique_lock lock(mu_);
  if (!initialized_) throw StreamError("PosePredictor: not initialized");
  predict_locked(t);
  state_ = ekf_update(state_, pose_measurement(z, cov), cfg_.weights);
}

void PosePredictor::advance_to(double t) {
  std::unique_lock lock(mu_);
  predict_locked(t);
}

PosePrediction PosePredictor::predict_pose_at(double t) const {
  EkfState s;
  {
    std::shared_lock lock(mu_);
    if (!initialized_) throw QueryError("predict_pose_at: filter not initialized");
    s = state_;
  }
  if (t < s.t) throw QueryError("predict_pose_at: query time is in the past");
  if (t > s.t) s = ekf_predict(s, t - s.t, process_noise(cfg_.noise, t - s.t));
  return {s.pose, s.P.topLeftCorner<3, 3>(), s.v, s.omega};
}

EkfState PosePredictor::snapshot() const {
  std::shared_lock lock(mu_);
  return state_;
}

PosePrediction predict_pose_at(const PosePredictor& predictor, double t) { return predictor.predict_pose_at(t); }

// ---------------------------------------------------------- initialization

namespace {

template <typename T>
std::size_t last_at_or_before(std::span<const T> s, double t) {
  // Index of the last sample with s[i].t <= t, or s.size() if none.
  auto it = std::upper_bound(s.begin(), s.end(), t, [](double v, const T& x) { return v < x.t; });
  if (it == s.begin()) return s.size();
  return static_cast<std::size_t>(it - s.begin()) - 1;
}

template <typename T>
std::pair<const T*, const T*> bracket(std::span<const T> s, double t) {
  const std::size_t i = last_at_or_before(s, t);
  if (i == s.size() || i + 1 >= s.size()) throw QueryError("interpolate: time not bracketed by the stream");
  return {&s[i], &s[i + 1]};
}

}  // namespace

WheelSample interpolate(std::span<const WheelSample> s, double t) {
  const auto [a, b] = bracket(s, t);
  const double f = (t - a->t) / (b->t - a->t);
  WheelSample out = *a;
  out.t = t;
  for (int i = 0; i < 4; ++i) out.rates[i] = a->rates[i] + f * (b->rates[i] - a->rates[i]);
  return out;
}

ImuSample interpolate(std::span<const ImuSample> s, double t) {
  const auto [a, b] = bracket(s, t);
  const double f = (t - a->t) / (b->t - a->t);
  ImuSample out;
  out.t = t;
  out.yaw_rate = a->yaw_rate + f * (b->yaw_rate - a->yaw_rate);
  out.accel = a->accel + f * (b->accel - a->accel);
  return out;
}

std::optional<InitResult> initialize(std::deque<SemanticFrame>& frames, std::span<const WheelSample> wheel,
                                     std::span<const ImuSample> imu, const FusionConfig& cfg) {
  validate(cfg.weights, cfg.mode);
  std::size_t dropped = 0;
  while (!frames.empty()) {
    const double t0 = frames.front().timestamp();
    auto has_before = [t0](const auto& s) { return !s.empty() && s.front().t <= t0; };
    auto has_after = [t0](const auto& s) { return !s.empty() && s.back().t > t0; };

    bool before_ok = true, after_ok = true;
    if (cfg.mode.use_wheel) {
      before_ok = before_ok && has_before(wheel);
      after_ok = after_ok && has_after(wheel);
    }
    if (cfg.mode.use_imu) {
      before_ok = before_ok && has_before(imu);
      after_ok = after_ok && has_after(imu);
    }
    if (!before_ok) {
      frames.pop_front();
      ++dropped;
      continue;
    }
    if (!after_ok) return std::nullopt;  // wait for more sensor data

    EkfState st;
    st.t = t0;
    double w_wheel = 0.0, w_imu = 0.0, omega = 0.0;
    if (cfg.mode.use_wheel) {
      const BodyTwist tw = wheel_twist(interpolate(wheel, t0));
      st.v = tw.v;
      w_wheel = cfg.mode.use_imu ? cfg.weights.w_wheel : 1.0;
      omega += w_wheel * tw.omega;
    }
    if (cfg.mode.use_imu) {
      w_imu = cfg.mode.use_wheel ? cfg.weights.w_imu : 1.0;
      omega += w_imu * interpolate(imu, t0).yaw_rate;
    }
    st.omega = (w_wheel + w_imu) > 0 ? omega / (w_wheel + w_imu) : 0.0;
    const double ps = cfg.noise.initial_pose_sigma, ts = cfg.noise.initial_twist_sigma;
    st.P.diagonal() << ps * ps, ps * ps, ps * ps, ts * ts, ts * ts;
    return InitResult{t0, st, dropped};
  }
  return std::nullopt;
}

// --------------------------------------------------------- pre-integration

Mat3 compose_jacobian_a(const Pose2& a, const Pose2& b) {
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  Mat3 j = Mat3::Identity();
  j(0, 2) = -s * b.x - c * b.y;
  j(1, 2) = c * b.x - s * b.y;
  return j;
}

Mat3 compose_jacobian_b(const Pose2& a) {
  const double c = std::cos(a.yaw), s = std::sin(a.yaw);
  Mat3 j = Mat3::Identity();
  j(0, 0) = c;
  j(0, 1) = -s;
  j(1, 0) = s;
  j(1, 1) = c;
  return j;
}

namespace {

// Value held at time t: the last sample at or before t, or the first sample
// when t precedes the stream.
template <typename T>
const T* held(std::span<const T> s, double t) {
  if (s.empty()) return nullptr;
  const std::size_t i = last_at_or_before(s, t);
  return i == s.size() ? &s.front() : &s[i];
}

}  // namespace

PreintegratedOdometry preintegrate(std::span<const WheelSample> wheel, std::span<const ImuSample> imu, double t_i,
                                   double t_j, const FusionConfig& cfg, const PreintegrationNoise& noise) {
  if (!(t_j > t_i)) throw InputError("preintegrate: t_j must be after t_i");
  const bool use_wheel = cfg.mode.use_wheel && !wheel.empty();
  const bool use_imu = cfg.mode.use_imu && !imu.empty();

  std::vector<double> cuts{t_i};
  auto add_cuts = [&](const auto& s) {
    auto it = std::upper_bound(s.begin(), s.end(), t_i, [](double v, const auto& x) { return v < x.t; });
    for (; it != s.end() && it->t < t_j; ++it) cuts.push_back(it->t);
  };
  if (use_wheel) add_cuts(wheel);
  if (use_imu) add_cuts(imu);
  cuts.push_back(t_j);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  double wi = 0.0, ww = 0.0;
  if (use_imu && use_wheel) {
    wi = cfg.weights.w_imu;
    ww = cfg.weights.w_wheel;
  } else if (use_imu) {
    wi = 1.0;
  } else if (use_wheel) {
    ww = 1.0;
  }

  PreintegratedOdometry out;
  out.duration = t_j - t_i;
  Vec3 d_bias = Vec3::Zero();    // d delta / d (differential scale)
  Vec3 d_common = Vec3::Zero();  // d delta / d (mean scale)
  for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
    const double a = cuts[k], dt = cuts[k + 1] - a;
    double v = 0.0, omega = 0.0, omega_wheel = 0.0;
    if (use_wheel) {
      const BodyTwist tw = wheel_twist(*held(wheel, a));
      v = tw.v;
      omega_wheel = ww * tw.omega;
      omega += omega_wheel;
    }
    if (use_imu) omega += wi * held(imu, a)->yaw_rate;
    const Pose2 step = integrate_twist(v, omega, dt);
    Mat3 q = Mat3::Zero();
    q(0, 0) = (noise.long_sigma * noise.long_sigma + noise.scale_sigma * noise.scale_sigma * v * v) * dt;
    q(1, 1) = noise.lat_sigma * noise.lat_sigma * dt;
    q(2, 2) = noise.yaw_sigma * noise.yaw_sigma * dt;
    const Mat3 ja = compose_jacobian_a(out.delta, step);
    const Mat3 jb = compose_jacobian_b(out.delta);
    out.cov = ja * out.cov * ja.transpose() + jb * q * jb.transpose();
    if (use_wheel) {
      const WheelSample& w = *held(wheel, a);
      const double h = 1e-7;
      const Pose2 sp = integrate_twist(v, omega + h, dt), sm = integrate_twist(v, omega - h, dt);
      const Vec3 d_omega((sp.x - sm.x) / (2 * h), (sp.y - sm.y) / (2 * h), dt);
      const Pose2 vp = integrate_twist(v + h, omega, dt), vm = integrate_twist(v - h, omega, dt);
      const Vec3 d_v((vp.x - vm.x) / (2 * h), (vp.y - vm.y) / (2 * h), 0.0);
      d_bias = ja * d_bias + jb * d_omega * (ww * v / w.track);
      d_common = ja * d_common + jb * (d_v * v + d_omega * omega_wheel);
    }
    out.delta = compose(out.delta, step);
  }
  const double sd = noise.differential_scale_sigma;
  const double sc = noise.common_scale_sigma;
  out.cov += sd * sd * d_bias * d_bias.transpose() + sc * sc * d_common * d_common.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

// ------------------------------------------------------------- stream I/O

void write_wheel(const std::filesystem::path& path, const std::vector<WheelSample>& s) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "# avm-wheel v1\n# t fl fr rl rr radius track\n" << std::setprecision(17);
  for (const auto& w : s) {
    out << w.t << " " << w.rates[0] << " " << w.rates[1] << " " << w.rates[2] << " " << w.rates[3] << " "
        << w.radius << " " << w.track << "\n";
  }
}

void write_imu(const std::filesystem::path& path, const std::vector<ImuSample>& s) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "# avm-imu v1\n# t yaw_rate ax ay\n" << std::setprecision(17);
  for (const auto& m : s) out << m.t << " " << m.yaw_rate << " " << m.accel.x() << " " << m.accel.y() << "\n";
}

namespace {

template <typename T, typename Parse>
std::vector<T> read_stream(const std::filesystem::path& path, const char* magic, Parse parse) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line.rfind("# avm-", 0) == 0 && line.find(" v") != std::string::npos && line != magic) {
        throw SchemaError(path.string(), lineno, "unexpected header '" + line + "'");
      }
      continue;
    }
    std::istringstream ss(line);
    T v;
    if (!parse(ss, v)) throw SchemaError(path.string(), lineno, "malformed record");
    if (!out.empty() && !(v.t > out.back().t)) {
      throw SchemaError(path.string(), lineno, "timestamps must strictly increase");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

std::vector<WheelSample> read_wheel(const std::filesystem::path& path) {
  return read_stream<WheelSample>(path, "# avm-wheel v1", [](std::istringstream& ss, WheelSample& w) {
    return static_cast<bool>(ss >> w.t >> w.rates[0] >> w.rates[1] >> w.rates[2] >> w.rates[3] >> w.radius >>
                             w.track) &&
           w.radius > 0 && w.track > 0;
  });
}

std::vector<ImuSample> read_imu(const std::filesystem::path& path) {
  return read_stream<ImuSample>(path, "# avm-imu v1", [](std::istringstream& ss, ImuSample& m) {
    return static_cast<bool>(ss >> m.t >> m.yaw_rate >> m.accel.x() >> m.accel.y());
  });
}

}  // namespace avm
