#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "avm/app/config.hpp"
#include "avm/app/eval.hpp"
#include "avm/mapping.hpp"
#include "avm/posegraph.hpp"
#include "avm/sim.hpp"

namespace avm::app {

/// Graph node id of a submap anchor (keyframe ids use the low range).
inline NodeId submap_node(std::uint64_t submap_id) { return (NodeId{1} << 40) + submap_id; }

struct RunStats {
  std::size_t frames = 0;
  std::size_t dropped_frames = 0;
  std::size_t tracking_failures = 0;
  std::size_t keyframes = 0;
  std::size_t submaps = 0;
  std::size_t loop_queries = 0;      // keyframes that passed the semantic gate
  std::size_t loop_candidates = 0;   // candidates sent to verification
  std::size_t episodes = 0;
  std::size_t local_solves = 0;
  double final_cost = 0.0;
  double t0 = 0.0;
};

/// Wall-clock seconds per stage; never part of the deterministic outputs.
struct RunTiming {
  double total = 0.0;
  double tracking = 0.0;
  double mapping = 0.0;
  double loop = 0.0;
  double optimization = 0.0;
};

struct SlamResult {
  std::vector<StampedPose> frames;              // front-end pose of every processed frame
  std::vector<StampedPose> keyframes_frontend;  // never corrected
  std::vector<StampedPose> keyframes;           // final optimized
  std::vector<ClosureRecord> closures;
  std::vector<LabeledPoint> map_cloud;          // global frame
  PoseGraph graph;
  RunStats stats;
  RunTiming timing;
};

/// Offline pipeline: initialization, per-frame predict / track / update,
/// keyframe and submap lifecycle, loop closure with scheduled optimization,
/// then a final pass over all submaps and the whole graph. Throws
/// InitStarvationError when the sensor queues never line up.
SlamResult run_slam(const Dataset& data, const RunConfig& cfg);

/// map_cloud.txt, map.ppm, trajectory.txt, keyframes.txt,
/// keyframes_frontend.txt, graph.g2o, closures.txt, run_summary.json,
/// timing.json and config.json.
void write_run(const std::filesystem::path& dir, const SlamResult& r, const RunConfig& cfg);

struct Simulation {
  GarageWorld world;
  Dataset data;
};

/// World and dataset for the configured template, laps, noise and seed.
Simulation simulate(const RunConfig& cfg);

}  // namespace avm::app
