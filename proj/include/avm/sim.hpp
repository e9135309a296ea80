#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "avm/camera.hpp"
#include "avm/fusion.hpp"
#include "avm/geometry.hpp"
#include "avm/image.hpp"
#include "avm/mapping.hpp"
#include "avm/semantic.hpp"

namespace avm {

enum class WorldTemplate { GridGarage, LoopCorridor, FigureEight };

const char* to_string(WorldTemplate t);
/// "grid-garage", "loop-corridor" or "figure-eight"; ConfigError otherwise.
WorldTemplate template_from_string(const std::string& name);

/// A painted marking: a stroke (two end points, painted width) or a filled
/// polygon.
struct Primitive {
  enum class Shape { Stroke, Polygon };
  SemanticLabel label = SemanticLabel::LaneLine;
  Shape shape = Shape::Stroke;
  std::vector<Vec2> pts;
  double width = 0.15;  // strokes only, m

  Vec2 bbox_min() const;
  Vec2 bbox_max() const;
  /// Point lies on the painted area.
  bool covers(const Vec2& p) const;
};

struct Landmark {
  std::string name;
  Vec2 p;
};

struct Waypoint {
  Vec2 p;
  double speed = 2.5;  // m/s on the leg starting here
};

struct TrajectorySpec {
  std::vector<Waypoint> waypoints;
  bool closed = true;
  double corner_radius = 4.0;  // m, fillet at every interior waypoint
  double laps = 1.3;           // closed routes: distance driven in perimeters
  double max_accel = 1.0;      // m/s^2
  double max_lateral_accel = 1.0;
  double max_yaw_rate = 0.6;   // rad/s
  double lookahead = 3.0;      // m, pure pursuit
};

struct GarageWorld {
  WorldTemplate kind = WorldTemplate::LoopCorridor;
  Vec2 extent_min = Vec2::Zero();
  Vec2 extent_max = Vec2::Zero();
  std::vector<Primitive> primitives;
  std::vector<Landmark> landmarks;
  std::size_t spot_rows = 0;  // grid garage only
  std::size_t spot_cols = 0;
  std::size_t parking_spots = 0;
  TrajectorySpec route;

  const Landmark& landmark(const std::string& name) const;
  bool contains(const Vec2& p) const;
};

/// Deterministic world for a template and seed (the seed varies marking
/// details: arrow placement, dashed patterns, landmark choice).
GarageWorld generate_world(std::uint64_t seed, WorldTemplate tmpl);

struct SensorNoiseModel {
  double wheel_rate_sigma = 0.01;      // rad/s per wheel
  double wheel_scale_sigma = 0.02;     // per-wheel scale factor, drawn once per run
  double imu_yaw_rate_sigma = 0.005;   // rad/s
  double imu_bias_walk = 1e-4;         // rad/s/sqrt(s)
  double imu_accel_sigma = 0.05;       // m/s^2
  double point_jitter = 0.03;          // m
  double dropout = 0.05;               // per primitive and frame

  void validate() const;
  static SensorNoiseModel none();
};

struct SimRates {
  double frame_hz = 10.0;
  double odometry_hz = 100.0;  // wheel and IMU, also the integration step
};

struct SimOptions {
  SensorNoiseModel noise;
  SimRates rates;
  double footprint_length = 17.18;  // m, longitudinal
  double footprint_width = 14.25;   // m, lateral
  double sample_spacing = 0.10;     // m
  double wheel_radius = 0.3;
  double track = 1.6;
  /// Render BEV label masks and decode them through the camera module
  /// instead of emitting points directly.
  bool render_masks = false;
  int mask_stride = 10;  // pixels between decoded samples
};

struct Dataset {
  std::vector<SemanticFrame> frames;
  std::vector<WheelSample> wheel;
  std::vector<ImuSample> imu;
  std::vector<StampedPose> groundtruth;  // at frame times
  std::vector<Landmark> landmarks;
};

/// Drives the route with a pure-pursuit controller and generates all
/// streams. Throws GenerationError when the route leaves the world.
Dataset simulate_run(const GarageWorld& world, const TrajectorySpec& traj, const SimOptions& opts,
                     std::uint64_t seed);

/// Points of every primitive inside the footprint at `pose`, in the vehicle
/// frame. With `rng` the sampling phase is random and jitter and dropout
/// apply; without it sampling is noise-free with zero phase.
std::vector<LabeledPoint> observe(const GarageWorld& world, const Pose2& pose, const SimOptions& opts,
                                  std::mt19937_64* rng);

/// Label mask of the BEV image at `pose` (gray levels per kMaskGrayLevels).
Image render_label_mask(const GarageWorld& world, const Pose2& pose, const BevCameraModel& bev);

struct LandmarkDistance {
  std::string a;
  std::string b;
  double meters = 0.0;
};

/// All pairs (i < j) in the given order. Throws LookupError for unknown names.
std::vector<LandmarkDistance> ground_truth_distances(const std::vector<Landmark>& landmarks,
                                                     const std::vector<std::string>& names);
std::vector<LandmarkDistance> ground_truth_distances(const GarageWorld& world, const std::vector<std::string>& names);

// ---- dataset directory (docs/formats.md)
void write_dataset(const std::filesystem::path& dir, const Dataset& d);
/// Frames come from frames.txt or, when that is absent, from masks.txt: one
/// "t path" record per frame naming a PGM label mask, decoded through the
/// centered BEV camera every `mask_stride` pixels.
Dataset read_dataset(const std::filesystem::path& dir, int mask_stride = 10);
void write_landmarks(const std::filesystem::path& path, const std::vector<Landmark>& lm);
std::vector<Landmark> read_landmarks(const std::filesystem::path& path);

}  // namespace avm
