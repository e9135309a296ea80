#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "avm/fusion.hpp"
#include "avm/loop.hpp"
#include "avm/mapping.hpp"
#include "avm/matching.hpp"
#include "avm/posegraph.hpp"
#include "avm/sim.hpp"

namespace avm::app {

/// Frame-to-submap tracking ICP and the visual fix it feeds to the EKF. A
/// registration is used when it passes the inlier and RMS gates even if it
/// hit the iteration cap: sliding along line-like markings converges slowly,
/// and the information matrix already leaves those directions unconstrained.
struct TrackingConfig {
  IcpConfig icp;
  /// Second ICP stage at this correspondence radius (0 disables). Frame
  /// points beyond the edge of the submap otherwise pull the pose backwards.
  double refine_radius = 0.2;  // m
  double min_inlier_fraction = 0.3;
  double max_rms = 0.2;  // m
  bool visual_updates = true;  // feed ICP poses back into the filter
  /// Graph edges drop the weaker translation direction of the tracking
  /// information when its eigenvalue falls below this fraction of the
  /// stronger one (lanes-only corridors). 0 keeps it.
  double degeneracy_ratio = 0.2;
};

struct BackendConfig {
  bool kinematic_edges = true;
  bool loop_closure = true;
  bool use_spq = true;
  bool optimize = true;
  bool local_optimization = true;  // subgraph solve when a submap fills
  int submaps_per_episode = 2;
  std::size_t max_candidates = 3;  // verified per keyframe
  double information_condition = 1e6;
  OptimizerConfig optimizer;
  PreintegrationNoise preintegration;
};

struct SimSpec {
  std::string world_template = "loop-corridor";
  double laps = 1.3;
  SensorNoiseModel noise;
  SimOptions options;  // noise member ignored; `noise` above wins
};

struct RunConfig {
  std::uint64_t seed = 1;
  FusionConfig fusion;
  TrackingConfig tracking;
  MappingConfig mapping;
  SpqConfig spq;
  LoopVerifyConfig loop;
  BackendConfig backend;
  SimSpec sim;
  /// Landmarks used for distance evaluation; empty means all.
  std::vector<std::string> landmarks;
  std::string dataset;  // input directory; empty -> simulate
  std::string output = "out";
  bool realtime = false;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

/// Parses JSON text. Unknown keys and type mismatches throw ConfigError
/// with the key path; the result is validated.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& path);
/// Full effective configuration as pretty-printed JSON.
std::string dump_config(const RunConfig& cfg);

/// Configuration with kinematic edges and the semantic gate off.
RunConfig visual_only(RunConfig cfg);

}  // namespace avm::app
