#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "avm/mapping.hpp"
#include "avm/sim.hpp"

namespace avm::app {

struct DistanceErrors {
  double mean = 0.0;
  double max = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
};

/// Absolute errors |world_i - map_i|. Throws InputError on length mismatch
/// or empty input.
DistanceErrors distance_error_metrics(const std::vector<double>& world, const std::vector<double>& map);

struct TrajectoryErrors {
  double ate_rmse = 0.0;       // m, after SE(2) alignment
  double rpe_per_meter = 0.0;  // translational drift per metre over the segments
  double rpe_yaw_per_meter = 0.0;  // rad/m
  std::size_t pairs = 0;
  std::size_t segments = 0;
  Pose2 alignment;  // maps the estimate onto ground truth
};

/// Closed-form least-squares rigid transform mapping `src` onto `dst`.
Pose2 align_se2(const std::vector<Vec2>& src, const std::vector<Vec2>& dst);

/// Pairs every estimate with the ground-truth pose at the same time
/// (linear interpolation, accepted when both bracketing samples lie within
/// `max_dt`), aligns, then reports ATE RMSE and RPE over `segment` metre
/// windows of ground-truth travel. Throws InputError for < 2 pairs.
TrajectoryErrors trajectory_error(const std::vector<StampedPose>& estimate,
                                  const std::vector<StampedPose>& groundtruth, double segment = 10.0,
                                  double max_dt = 0.05);

/// Ground-truth pose at time t by interpolation; nullopt outside the stream
/// or when the bracketing samples are more than `max_dt` from t.
std::optional<Pose2> interpolate_pose(const std::vector<StampedPose>& traj, double t, double max_dt);

/// Landmark positions in the map frame: each landmark is carried by the
/// keyframe whose true pose is nearest, through its estimated pose.
std::vector<Landmark> map_landmarks(const std::vector<Landmark>& truth, const std::vector<StampedPose>& kf_estimate,
                                    const std::vector<StampedPose>& groundtruth, double max_dt = 0.05);

/// Exported loop closure (closures.txt).
struct ClosureRecord {
  double kf_time = 0.0;
  double anchor_time = 0.0;  // first keyframe of the matched submap
  std::uint64_t keyframe_id = 0;
  std::uint64_t submap_id = 0;
  Pose2 transform;  // keyframe in the submap frame
  double rms = 0.0;
  double inlier_fraction = 0.0;
};

void write_closures(const std::filesystem::path& path, const std::vector<ClosureRecord>& c);
std::vector<ClosureRecord> read_closures(const std::filesystem::path& path);

struct ClosureStats {
  std::size_t candidates = 0;
  std::size_t accepted = 0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  double precision = 1.0;  // 1 when nothing was accepted
  double recall = 0.0;     // true positives over verified candidates
};

/// A closure is false when its transform deviates from the true relative
/// pose by more than `max_translation` or `max_yaw`.
bool is_true_closure(const ClosureRecord& c, const std::vector<StampedPose>& groundtruth,
                     double max_translation = 0.5, double max_yaw = 2.0 * std::numbers::pi / 180.0);
ClosureStats closure_stats(const std::vector<ClosureRecord>& closures, std::size_t candidates,
                           const std::vector<StampedPose>& groundtruth);

struct LandmarkPairError {
  std::string a;
  std::string b;
  double world = 0.0;
  double map = 0.0;
};

struct EvalReport {
  std::vector<LandmarkPairError> pairs;
  std::optional<DistanceErrors> distance;
  std::optional<TrajectoryErrors> frontend;   // front-end keyframe poses
  std::optional<TrajectoryErrors> optimized;  // final keyframe poses
  std::optional<TrajectoryErrors> frames;     // every tracked frame
  double frontend_endpoint_drift = 0.0;       // m, unaligned, from the common start
  double trajectory_length = 0.0;             // m, ground truth
  std::optional<ClosureStats> closures;
};

/// Evaluates a run directory (keyframes_frontend.txt, keyframes.txt,
/// trajectory.txt, closures.txt, run_summary.json) against a dataset
/// directory with ground truth and, optionally, landmarks.
EvalReport evaluate_run(const std::filesystem::path& run_dir, const std::filesystem::path& dataset_dir,
                        const std::vector<std::string>& landmark_names = {});

/// Deterministic JSON (fixed key order, 9 significant digits).
std::string report_json(const EvalReport& r);

}  // namespace avm::app
