#pragma once

#include <optional>
#include <vector>

#include "avm/mapping.hpp"
#include "avm/matching.hpp"
#include "avm/semantic.hpp"

namespace avm {

struct SpqConfig {
  int min_distinct_categories = 2;
  double min_weighted_score = 60.0;
  double min_travel_distance = 20.0;  // m
  double search_radius = 10.0;        // m
  LabelWeights weights;

  /// Throws ConfigError for negative thresholds.
  void validate() const;
};

struct SpqResult {
  bool pass = false;
  double score = 0.0;
  int distinct_categories = 0;
};

SpqResult spq_qualify(const CategoryCensus& census, const SpqConfig& cfg);
/// Census under the configured weights, then the gate.
SpqResult spq_qualify(const std::vector<LabeledPoint>& pts, const SpqConfig& cfg);

struct LoopCandidate {
  std::uint64_t keyframe_id = 0;
  std::uint64_t submap_id = 0;
  /// Keyframe pose in the submap frame predicted from current estimates.
  Pose2 predicted;
  double distance = 0.0;  // m, anchor to keyframe estimate
};

/// Finalized submaps near the keyframe's global estimate that pass SPQ and
/// lie at least min_travel_distance behind it along the trajectory, nearest
/// first. With `use_spq` off the semantic gate on submaps is skipped.
std::vector<LoopCandidate> find_loop_candidates(const Keyframe& kf, const Pose2& kf_global, const GlobalMap& map,
                                                const SpqConfig& cfg, bool use_spq = true);

struct LoopVerifyConfig {
  // Correlative search around the predicted pose: translation window and
  // step (m), yaw window and step (rad).
  double search_window = 2.0;
  double search_step = 0.1;
  double search_yaw = 0.05;
  double search_yaw_step = 0.01;
  /// A source point scores when a same-label target point lies this close.
  double hit_radius = 0.15;
  std::size_t max_samples = 400;
  /// Reject when the best peak farther than `peak_separation` from the
  /// winner scores above this fraction of it.
  double max_ambiguity = 0.85;
  double peak_separation = 0.5;
  /// Correspondence radii of the ICP refinement stages, m.
  std::vector<double> radii = {0.5, 0.25};
  IcpConfig icp;
  double min_inlier_fraction = 0.6;
  double max_rms = 0.3;  // m

  void validate() const;
};

struct LoopClosure {
  LoopCandidate candidate;
  Pose2 transform;  // keyframe pose in the submap frame
  double rms = 0.0;
  double inlier_fraction = 0.0;
  double score = 0.0;      // correlative hit fraction at the winner
  double ambiguity = 0.0;  // runner-up peak / winner
  Mat3 information = Mat3::Zero();  // submap frame
};

struct SearchPeak {
  Pose2 pose;
  double score = 0.0;      // hit fraction of the sampled source points
  double runner_up = 0.0;  // best score farther than peak_separation away
};

/// Exhaustive search over the window around `center` scoring same-label
/// hits against a rasterized target.
SearchPeak correlative_search(const std::vector<LabeledPoint>& source, const TargetCloud& target, const Pose2& center,
                              const LoopVerifyConfig& cfg);

/// Correlative search around the predicted pose, then ICP refinement of the
/// keyframe frame against the submap cloud. Returns the closure when the
/// search peak is unambiguous and the final ICP stage converged and passes
/// the inlier and RMS gates.
std::optional<LoopClosure> verify_loop(const LoopCandidate& candidate, const SemanticFrame& kf_frame,
                                       const TargetCloud& submap_target, const LoopVerifyConfig& cfg);

}  // namespace avm
