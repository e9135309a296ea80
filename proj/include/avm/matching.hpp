#pragma once

#include <span>
#include <vector>

#include "avm/geometry.hpp"
#include "avm/semantic.hpp"
#include "avm/spatial_index.hpp"

namespace avm {

struct IcpConfig {
  int max_iterations = 30;
  double correspondence_radius = 0.5;  // m
  double eps_translation = 1e-4;       // m
  double eps_rotation = 1e-4;          // rad
  std::size_t min_inliers = 30;
  bool label_strict = true;
  // Information estimate: residual sigma floor and the number of points
  // treated as one independent observation.
  double sigma_floor = 0.05;
  double points_per_observation = 10.0;

  /// Throws ConfigError for radius <= 0 or max_iterations < 1.
  void validate() const;
};

/// Labeled target cloud with its grid index and per-point structure
/// tensors (line-like points constrain only their normal direction).
class TargetCloud {
 public:
  TargetCloud() = default;
  TargetCloud(std::vector<LabeledPoint> points, double cell);

  const LabeledGrid& index() const { return index_; }
  const std::vector<LabeledPoint>& points() const { return points_; }
  const Mat2& constraint(std::size_t i) const { return constraint_[i]; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

 private:
  std::vector<LabeledPoint> points_;
  LabeledGrid index_;
  std::vector<Mat2> constraint_;
};

struct IcpResult {
  Pose2 transform;
  double rms_residual = 0.0;  // over final inliers, m
  std::size_t inlier_count = 0;
  double inlier_fraction = 0.0;
  bool converged = false;
  int iterations = 0;
  /// RMS of the residual truncated at the correspondence radius, evaluated
  /// after every correspondence step (non-increasing).
  std::vector<double> cost_history;
  /// Information of the (x, y, yaw) estimate in the target frame.
  Mat3 information = Mat3::Zero();
  /// Audit: true if any accepted pair joined different labels.
  bool used_cross_label_pairs = false;
};

/// Least-squares SE(2) transform T minimizing sum |T p_i - q_i|^2 (centroid +
/// 2x2 SVD). Throws DegenerateError for fewer than 2 pairs or coincident p_i.
Pose2 rigid_align_2d(std::span<const Vec2> src, std::span<const Vec2> dst);

/// Label-aware point-to-point ICP of `source` (vehicle frame) against
/// `target`. Never throws on lack of overlap: fewer than 3 correspondences
/// returns converged = false.
IcpResult icp_register(const std::vector<LabeledPoint>& source, const TargetCloud& target, const Pose2& initial,
                       const IcpConfig& cfg);
IcpResult icp_register(const SemanticFrame& source, const TargetCloud& target, const Pose2& initial,
                       const IcpConfig& cfg);

/// Coarse-to-fine registration: one icp_register per radius, each stage
/// seeded with the previous transform. A stage that finds fewer than 3
/// correspondences ends the sequence. Results are in stage order and each
/// keeps its own (fixed-radius) cost history.
std::vector<IcpResult> icp_register_stages(const std::vector<LabeledPoint>& source, const TargetCloud& target,
                                           const Pose2& initial, const IcpConfig& cfg,
                                           std::span<const double> radii);

/// Clamps eigenvalues of a symmetric information matrix to >= max/cond.
Mat3 floor_information(const Mat3& info, double cond = 1e6);
/// Covariance from a floored information matrix.
Mat3 information_to_covariance(const Mat3& info, double cond = 1e6);
/// Re-expresses an (x, y, yaw) information matrix from the target frame in
/// the body frame of `pose`.
Mat3 information_in_body_frame(const Mat3& info, const Pose2& pose);

}  // namespace avm
