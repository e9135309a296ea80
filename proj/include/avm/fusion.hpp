#pragma once

#include <array>
#include <deque>
#include <filesystem>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "avm/geometry.hpp"
#include "avm/semantic.hpp"

namespace avm {

using Vec5 = Eigen::Matrix<double, 5, 1>;
using Mat5 = Eigen::Matrix<double, 5, 5>;

/// Encoder sample. Wheel order: front-left, front-right, rear-left, rear-right.
struct WheelSample {
  double t = 0.0;
  std::array<double, 4> rates{};  // rad/s
  double radius = 0.3;            // m
  double track = 1.6;             // m
};

struct ImuSample {
  double t = 0.0;
  double yaw_rate = 0.0;      // rad/s
  Vec2 accel = Vec2::Zero();  // m/s^2, body frame
};

struct BodyTwist {
  double v = 0.0;      // forward speed, m/s
  double omega = 0.0;  // yaw rate, rad/s
};

/// Rear-axle differential drive: v = r (wl + wr) / 2, omega = r (wr - wl) / track.
BodyTwist wheel_twist(const WheelSample& s);
/// Front-axle twist; used only for consistency diagnostics.
BodyTwist front_wheel_twist(const WheelSample& s);

struct WheelStep {
  Pose2 delta;
  double v = 0.0;
  double omega = 0.0;
};

/// Motion between two encoder samples using the rates held over the interval
/// (those of `prev`) and the exact arc model. Throws StreamError unless
/// next.t > prev.t.
WheelStep wheel_odometry_step(const WheelSample& prev, const WheelSample& next);

/// State (x, y, yaw, v, omega) and covariance P at time t.
struct EkfState {
  double t = 0.0;
  Pose2 pose;
  double v = 0.0;
  double omega = 0.0;
  Mat5 P = Mat5::Zero();

  Vec5 vector() const;
  static EkfState from_vector(double t, const Vec5& x, const Mat5& P);
};

/// IMU (w_imu) and wheel (w_wheel) fusion weights, both in [0, 1].
struct FusionWeights {
  double w_imu = 0.7;
  double w_wheel = 0.3;
};

struct FusionMode {
  bool use_wheel = true;
  bool use_imu = true;
};

/// Throws ConfigError for weights outside [0,1] or, with both sensors on,
/// weights that do not sum to 1.
void validate(const FusionWeights& w, const FusionMode& mode);

/// Constant speed / constant turn-rate transition f(x, dt).
Vec5 motion_model(const Vec5& x, double dt);
/// Analytic Jacobian of motion_model with respect to x.
Mat5 motion_jacobian(const Vec5& x, double dt);

/// x <- f(x), P <- F P F^T + Q.
EkfState ekf_predict(const EkfState& state, double dt, const Mat5& Q);

enum class SensorKind { Imu, Wheel, Visual };

/// Linear measurement z = H x + noise(R). Rows listed in `angle_rows` carry
/// angles and have their innovation wrapped.
struct Measurement {
  SensorKind sensor = SensorKind::Visual;
  Eigen::VectorXd z;
  Eigen::MatrixXd H;
  Eigen::MatrixXd R;
  std::vector<int> angle_rows;
};

/// Kalman update. IMU and wheel noise are scaled by 1/w_imu and 1/w_wheel; a
/// zero weight skips the update. Throws NumericalError when the innovation
/// covariance is singular.
EkfState ekf_update(const EkfState& state, const Measurement& m, const FusionWeights& weights);

struct FusionNoise {
  double accel_density = 1.0;         // (m/s^2)^2 * s on v
  double yaw_accel_density = 0.5;     // (rad/s^2)^2 * s on omega
  double pose_density = 1e-6;         // m^2/s and rad^2/s on the pose block
  double wheel_speed_sigma = 0.02;    // m/s
  double wheel_yaw_rate_sigma = 0.02; // rad/s
  double imu_yaw_rate_sigma = 0.005;  // rad/s
  double initial_pose_sigma = 1e-6;
  double initial_twist_sigma = 0.1;
};

struct FusionConfig {
  FusionMode mode;
  FusionWeights weights;
  FusionNoise noise;
  bool use_accelerometer = false;  // integrate body-x acceleration as control input
};

Mat5 process_noise(const FusionNoise& n, double dt);
Measurement wheel_measurement(const WheelSample& s, const FusionNoise& n);
Measurement imu_measurement(const ImuSample& s, const FusionNoise& n);
Measurement pose_measurement(const Pose2& z, const Mat3& cov);

struct PosePrediction {
  Pose2 pose;
  Mat3 cov = Mat3::Zero();
  double v = 0.0;
  double omega = 0.0;
};

/// Single-writer EKF front-end. One ingest thread applies samples in
/// timestamp order; predict_pose_at may be called from other threads and
/// always sees a consistent snapshot.
class PosePredictor {
 public:
  explicit PosePredictor(FusionConfig cfg = {});

  void reset(const EkfState& initial);
  bool initialized() const;

  /// Predict to the sample time, then update. Throws StreamError for
  /// out-of-order samples.
  void ingest_wheel(const WheelSample& s);
  void ingest_imu(const ImuSample& s);
  /// Visual pose fix (e.g. tracking ICP) at the current filter time.
  void update_pose(double t, const Pose2& z, const Mat3& cov);
  /// Commit a prediction up to t.
  void advance_to(double t);

  /// Mean propagated to t without committing. Throws QueryError for t in
  /// the past.
  PosePrediction predict_pose_at(double t) const;

  EkfState snapshot() const;
  const FusionConfig& config() const { return cfg_; }

 private:
  void predict_locked(double t);

  FusionConfig cfg_;
  mutable std::shared_mutex mu_;
  EkfState state_;
  bool initialized_ = false;
  double last_accel_ = 0.0;
};

PosePrediction predict_pose_at(const PosePredictor& predictor, double t);

/// Linear interpolation of stream values at time t. Throws QueryError when t
/// is not bracketed by the stream.
WheelSample interpolate(std::span<const WheelSample> s, double t);
ImuSample interpolate(std::span<const ImuSample> s, double t);

struct InitResult {
  double t0 = 0.0;
  EkfState state;
  std::size_t dropped_frames = 0;
};

/// Scans the BEV frame queue front to back for the first frame time t0 at
/// which every selected sensor queue has a sample at or before t0 and one
/// after it. Frames that precede a sensor's first sample are popped from
/// `frames`. Returns nullopt (not ready, frame kept) while a selected queue
/// has no sample after the front frame yet.
std::optional<InitResult> initialize(std::deque<SemanticFrame>& frames, std::span<const WheelSample> wheel,
                                     std::span<const ImuSample> imu, const FusionConfig& cfg);

/// Body-frame noise densities for pre-integrated odometry (variance per second).
struct PreintegrationNoise {
  double long_sigma = 0.02;   // m/sqrt(s)
  double lat_sigma = 0.01;    // m/sqrt(s)
  double yaw_sigma = 0.005;   // rad/sqrt(s)
  double scale_sigma = 0.02;  // longitudinal, fraction of distance per sqrt(s)
  /// Right-minus-left rear wheel scale error, constant over a run. It biases
  /// the wheel yaw rate by v * delta / track, so its contribution is fully
  /// correlated across the interval.
  double differential_scale_sigma = 0.03;
  /// Mean wheel scale error, also constant over a run. Scales both the
  /// distance travelled and the wheel yaw rate.
  double common_scale_sigma = 0.015;
};

struct PreintegratedOdometry {
  std::uint64_t start_id = 0;
  std::uint64_t end_id = 0;
  Pose2 delta;
  Mat3 cov = Mat3::Zero();
  double duration = 0.0;
};

/// Relative motion over [t_i, t_j] from zero-order-held wheel speed and the
/// weighted yaw rate (w_imu * imu + w_wheel * wheel), composed step by step
/// with first-order covariance propagation.
PreintegratedOdometry preintegrate(std::span<const WheelSample> wheel, std::span<const ImuSample> imu, double t_i,
                                   double t_j, const FusionConfig& cfg, const PreintegrationNoise& noise);

/// Jacobians of compose(a, b) with respect to a and b.
Mat3 compose_jacobian_a(const Pose2& a, const Pose2& b);
Mat3 compose_jacobian_b(const Pose2& a);

/// Multi-producer, single-consumer sample queue.
template <typename T>
class SampleQueue {
 public:
  void push(T v) {
    std::lock_guard lock(mu_);
    q_.push_back(std::move(v));
  }
  std::deque<T> drain() {
    std::lock_guard lock(mu_);
    std::deque<T> out;
    out.swap(q_);
    return out;
  }
  std::size_t size() const {
    std::lock_guard lock(mu_);
    return q_.size();
  }

 private:
  mutable std::mutex mu_;
  std::deque<T> q_;
};

// ---- interchange (docs/formats.md)
void write_wheel(const std::filesystem::path& path, const std::vector<WheelSample>& s);
std::vector<WheelSample> read_wheel(const std::filesystem::path& path);
void write_imu(const std::filesystem::path& path, const std::vector<ImuSample>& s);
std::vector<ImuSample> read_imu(const std::filesystem::path& path);

}  // namespace avm
