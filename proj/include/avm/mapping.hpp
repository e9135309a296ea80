#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "avm/geometry.hpp"
#include "avm/matching.hpp"
#include "avm/semantic.hpp"

namespace avm {

struct MappingConfig {
  std::size_t submap_capacity = 10;
  double overlap_fraction = 0.5;
  double downsample_cell = 0.10;       // m
  double keyframe_difference = 0.5;    // accept when difference exceeds this
  double difference_radius = 0.15;     // m
  double target_cell = 0.5;            // grid cell of target clouds, m

  /// Throws ConfigError for capacity < 2, overlap outside (0, 1) or
  /// non-positive cells and radii.
  void validate() const;
  /// Keyframes a submap holds before the next one starts receiving them.
  std::size_t overlap_start() const;
};

struct Keyframe {
  std::uint64_t id = 0;
  double timestamp = 0.0;
  /// Tracking-frame pose; never changed after insertion.
  Pose2 frontend_pose;
  /// Latest optimized global pose.
  Pose2 pose;
  /// Travelled distance along the tracked trajectory, m.
  double travel = 0.0;
  SemanticFrame frame;  // downsampled, vehicle frame
  CategoryCensus census;
};

enum class SubmapState { Active, Finalizing, Finalized };
const char* to_string(SubmapState s);

struct Submap {
  std::uint64_t id = 0;
  /// Optimized anchor; the pose of the first keyframe at insertion.
  Pose2 anchor;
  Pose2 frontend_anchor;
  std::vector<std::uint64_t> keyframe_ids;
  /// Aggregated, downsampled points in the submap frame.
  std::vector<LabeledPoint> cloud;
  SubmapState state = SubmapState::Active;
  CategoryCensus census;
  double travel_min = 0.0;
  double travel_max = 0.0;
  /// Target built at finalization for loop verification (submap frame).
  std::shared_ptr<const TargetCloud> target;
};

/// Accept iff the difference between the candidate and the last keyframe
/// exceeds the threshold; the first frame (no last keyframe) is accepted.
bool keyframe_filter(const SemanticFrame& candidate, const Keyframe* last_kf, const Pose2& relative_pose,
                     const MappingConfig& cfg);

/// Finalized submaps plus the merged cloud cache in the global frame.
class GlobalMap {
 public:
  void add(const Submap& s);
  void update(const Submap& s);
  const std::map<std::uint64_t, Submap>& submaps() const { return submaps_; }
  bool empty() const { return submaps_.empty(); }
  /// Union of finalized submap clouds under their anchors, ordered by submap id.
  const std::vector<LabeledPoint>& merged_cloud() const;

 private:
  std::map<std::uint64_t, Submap> submaps_;
  mutable std::vector<LabeledPoint> merged_;
  mutable bool dirty_ = true;
};

struct InsertResult {
  std::vector<std::uint64_t> submaps;          // submaps that received the keyframe
  std::vector<std::uint64_t> created;          // submaps started by this keyframe
  std::optional<std::uint64_t> finalizing;     // submap that reached capacity
};

/// Keyframe / dual-submap / global-map lifecycle. Single owner thread;
/// active_target_cloud hands out immutable snapshots.
class Mapper {
 public:
  explicit Mapper(MappingConfig cfg = {});

  const MappingConfig& config() const { return cfg_; }

  /// Downsamples the frame, builds the keyframe and inserts it. `estimate`
  /// seeds the optimized pose (defaults to the front-end pose).
  std::pair<const Keyframe*, InsertResult> add_keyframe(double timestamp, const Pose2& frontend_pose,
                                                        const SemanticFrame& frame, double travel,
                                                        const std::optional<Pose2>& estimate = std::nullopt);
  /// Appends to the current submap, and to the next one once the current
  /// fill reaches the overlap start. A submap reaching capacity turns
  /// Finalizing and the next one becomes current.
  InsertResult insert_keyframe(Keyframe kf);

  /// Re-projects member keyframes under their latest poses, downsamples,
  /// marks the submap Finalized and registers it in the global map.
  void finalize_submap(std::uint64_t id);
  /// Finalizes every submap still open (end of run).
  std::vector<std::uint64_t> finalize_all();

  /// Publishes optimized poses: keyframe poses and submap anchors are
  /// replaced and the finalized submaps they touch re-corrected.
  void apply_poses(const std::map<std::uint64_t, Pose2>& keyframe_poses,
                   const std::map<std::uint64_t, Pose2>& submap_anchors);

  /// Current submap cloud in the tracking frame, for frame-to-submap ICP.
  std::shared_ptr<const TargetCloud> active_target_cloud() const { return active_target_; }

  const Keyframe* last_keyframe() const;
  const Keyframe& keyframe(std::uint64_t id) const;
  const std::map<std::uint64_t, Keyframe>& keyframes() const { return keyframes_; }
  const Submap& submap(std::uint64_t id) const;
  const std::map<std::uint64_t, Submap>& submaps() const { return submaps_; }
  std::optional<std::uint64_t> current_submap() const { return current_; }
  std::optional<std::uint64_t> next_submap() const { return next_; }
  const GlobalMap& global_map() const { return global_; }

  /// Submap cloud rebuilt from its keyframes under the given pose source.
  std::vector<LabeledPoint> rebuild_cloud(const Submap& s, bool use_frontend) const;

 private:
  std::uint64_t new_submap();
  void append(Submap& s, const Keyframe& kf);
  void refresh_active_target();

  MappingConfig cfg_;
  std::map<std::uint64_t, Keyframe> keyframes_;
  std::map<std::uint64_t, Submap> submaps_;
  std::optional<std::uint64_t> current_;
  std::optional<std::uint64_t> next_;
  std::uint64_t next_kf_id_ = 0;
  std::uint64_t next_submap_id_ = 0;
  GlobalMap global_;
  std::shared_ptr<const TargetCloud> active_target_;
};

// ---- exports (docs/formats.md)
void write_map_cloud(const std::filesystem::path& path, const std::vector<LabeledPoint>& pts);
std::vector<LabeledPoint> read_map_cloud(const std::filesystem::path& path);

struct StampedPose {
  double t = 0.0;
  Pose2 pose;
};
void write_trajectory(const std::filesystem::path& path, const std::vector<StampedPose>& traj);
std::vector<StampedPose> read_trajectory(const std::filesystem::path& path);

}  // namespace avm
