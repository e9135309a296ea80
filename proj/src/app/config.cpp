#include "avm/app/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "avm/errors.hpp"

namespace avm::app {

using nlohmann::json;

namespace {

// Field lists shared by the reader and the writer.

template <class V>
void bind(V& v, FusionMode& c) {
  v("use_wheel", c.use_wheel);
  v("use_imu", c.use_imu);
}
template <class V>
void bind(V& v, FusionWeights& c) {
  v("w_imu", c.w_imu);
  v("w_wheel", c.w_wheel);
}
template <class V>
void bind(V& v, FusionNoise& c) {
  v("accel_density", c.accel_density);
  v("yaw_accel_density", c.yaw_accel_density);
  v("pose_density", c.pose_density);
  v("wheel_speed_sigma", c.wheel_speed_sigma);
  v("wheel_yaw_rate_sigma", c.wheel_yaw_rate_sigma);
  v("imu_yaw_rate_sigma", c.imu_yaw_rate_sigma);
  v("initial_pose_sigma", c.initial_pose_sigma);
  v("initial_twist_sigma", c.initial_twist_sigma);
}
template <class V>
void bind(V& v, FusionConfig& c) {
  v("mode", c.mode);
  v("weights", c.weights);
  v("noise", c.noise);
  v("use_accelerometer", c.use_accelerometer);
}
template <class V>
void bind(V& v, IcpConfig& c) {
  v("max_iterations", c.max_iterations);
  v("correspondence_radius", c.correspondence_radius);
  v("eps_translation", c.eps_translation);
  v("eps_rotation", c.eps_rotation);
  v("min_inliers", c.min_inliers);
  v("label_strict", c.label_strict);
  v("sigma_floor", c.sigma_floor);
  v("points_per_observation", c.points_per_observation);
}
template <class V>
void bind(V& v, TrackingConfig& c) {
  v("icp", c.icp);
  v("refine_radius", c.refine_radius);
  v("min_inlier_fraction", c.min_inlier_fraction);
  v("max_rms", c.max_rms);
  v("visual_updates", c.visual_updates);
  v("degeneracy_ratio", c.degeneracy_ratio);
}
template <class V>
void bind(V& v, MappingConfig& c) {
  v("submap_capacity", c.submap_capacity);
  v("overlap_fraction", c.overlap_fraction);
  v("downsample_cell", c.downsample_cell);
  v("keyframe_difference", c.keyframe_difference);
  v("difference_radius", c.difference_radius);
  v("target_cell", c.target_cell);
}
template <class V>
void bind(V& v, SpqConfig& c) {
  v("min_distinct_categories", c.min_distinct_categories);
  v("min_weighted_score", c.min_weighted_score);
  v("min_travel_distance", c.min_travel_distance);
  v("search_radius", c.search_radius);
  v("weights", c.weights);
}
template <class V>
void bind(V& v, LoopVerifyConfig& c) {
  v("search_window", c.search_window);
  v("search_step", c.search_step);
  v("search_yaw", c.search_yaw);
  v("search_yaw_step", c.search_yaw_step);
  v("hit_radius", c.hit_radius);
  v("max_samples", c.max_samples);
  v("max_ambiguity", c.max_ambiguity);
  v("peak_separation", c.peak_separation);
  v("radii", c.radii);
  v("icp", c.icp);
  v("min_inlier_fraction", c.min_inlier_fraction);
  v("max_rms", c.max_rms);
}
template <class V>
void bind(V& v, OptimizerConfig& c) {
  v("max_iterations", c.max_iterations);
  v("initial_damping", c.initial_damping);
  v("max_damping", c.max_damping);
  v("gradient_tolerance", c.gradient_tolerance);
  v("step_tolerance", c.step_tolerance);
  v("huber", c.huber);
  v("huber_delta", c.huber_delta);
}
template <class V>
void bind(V& v, PreintegrationNoise& c) {
  v("long_sigma", c.long_sigma);
  v("lat_sigma", c.lat_sigma);
  v("yaw_sigma", c.yaw_sigma);
  v("scale_sigma", c.scale_sigma);
  v("differential_scale_sigma", c.differential_scale_sigma);
  v("common_scale_sigma", c.common_scale_sigma);
}
template <class V>
void bind(V& v, BackendConfig& c) {
  v("kinematic_edges", c.kinematic_edges);
  v("loop_closure", c.loop_closure);
  v("use_spq", c.use_spq);
  v("optimize", c.optimize);
  v("local_optimization", c.local_optimization);
  v("submaps_per_episode", c.submaps_per_episode);
  v("max_candidates", c.max_candidates);
  v("information_condition", c.information_condition);
  v("optimizer", c.optimizer);
  v("preintegration", c.preintegration);
}
template <class V>
void bind(V& v, SensorNoiseModel& c) {
  v("wheel_rate_sigma", c.wheel_rate_sigma);
  v("wheel_scale_sigma", c.wheel_scale_sigma);
  v("imu_yaw_rate_sigma", c.imu_yaw_rate_sigma);
  v("imu_bias_walk", c.imu_bias_walk);
  v("imu_accel_sigma", c.imu_accel_sigma);
  v("point_jitter", c.point_jitter);
  v("dropout", c.dropout);
}
template <class V>
void bind(V& v, SimRates& c) {
  v("frame_hz", c.frame_hz);
  v("odometry_hz", c.odometry_hz);
}
template <class V>
void bind(V& v, SimOptions& c) {
  v("rates", c.rates);
  v("footprint_length", c.footprint_length);
  v("footprint_width", c.footprint_width);
  v("sample_spacing", c.sample_spacing);
  v("wheel_radius", c.wheel_radius);
  v("track", c.track);
  v("render_masks", c.render_masks);
  v("mask_stride", c.mask_stride);
}
template <class V>
void bind(V& v, SimSpec& c) {
  v("template", c.world_template);
  v("laps", c.laps);
  v("noise", c.noise);
  v("options", c.options);
}
template <class V>
void bind(V& v, RunConfig& c) {
  v("seed", c.seed);
  v("fusion", c.fusion);
  v("tracking", c.tracking);
  v("mapping", c.mapping);
  v("spq", c.spq);
  v("loop", c.loop);
  v("backend", c.backend);
  v("sim", c.sim);
  v("landmarks", c.landmarks);
  v("dataset", c.dataset);
  v("output", c.output);
  v("realtime", c.realtime);
}

template <class T>
constexpr bool is_leaf = std::is_arithmetic_v<T> || std::is_same_v<T, std::string> ||
                         std::is_same_v<T, std::vector<double>> || std::is_same_v<T, std::vector<std::string>> ||
                         std::is_same_v<T, LabelWeights>;

[[noreturn]] void type_error(const std::string& path, const char* expected) {
  throw ConfigError("config: " + path + " must be " + expected);
}

template <class T>
void read(const json& j, T& out, const std::string& path);

struct Reader {
  const json& j;
  std::string path;
  std::set<std::string> known;

  template <class T>
  void operator()(const char* key, T& val) {
    known.insert(key);
    auto it = j.find(key);
    if (it != j.end()) read(*it, val, path.empty() ? key : path + "." + key);
  }
};

template <class T>
void read(const json& j, T& out, const std::string& path) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) type_error(path, "a boolean");
    out = j.get<bool>();
  } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
    if (!j.is_number_unsigned()) type_error(path, "a non-negative integer");
    out = j.get<T>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) type_error(path, "an integer");
    out = j.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) type_error(path, "a number");
    out = j.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) type_error(path, "a string");
    out = j.get<std::string>();
  } else if constexpr (std::is_same_v<T, std::vector<double>>) {
    if (!j.is_array()) type_error(path, "an array of numbers");
    out.clear();
    for (const auto& e : j) {
      if (!e.is_number()) type_error(path, "an array of numbers");
      out.push_back(e.get<double>());
    }
  } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
    if (!j.is_array()) type_error(path, "an array of strings");
    out.clear();
    for (const auto& e : j) {
      if (!e.is_string()) type_error(path, "an array of strings");
      out.push_back(e.get<std::string>());
    }
  } else if constexpr (std::is_same_v<T, LabelWeights>) {
    if (!j.is_array() || j.size() != kLabelCount) type_error(path, "an array of 4 numbers");
    std::array<double, kLabelCount> w{};
    for (std::size_t i = 0; i < kLabelCount; ++i) {
      if (!j[i].is_number()) type_error(path, "an array of 4 numbers");
      w[i] = j[i].get<double>();
    }
    out = LabelWeights(w);
  } else {
    if (!j.is_object()) type_error(path.empty() ? "document" : path, "an object");
    Reader r{j, path, {}};
    bind(r, out);
    for (const auto& [k, _] : j.items()) {
      if (!r.known.count(k)) throw ConfigError("config: unknown key " + (path.empty() ? k : path + "." + k));
    }
  }
}

template <class T>
json write(T& val);

struct Writer {
  json& j;
  template <class T>
  void operator()(const char* key, T& val) {
    j[key] = write(val);
  }
};

template <class T>
json write(T& val) {
  if constexpr (std::is_same_v<T, LabelWeights>) {
    return json(val.values());
  } else if constexpr (is_leaf<T>) {
    return json(val);
  } else {
    json o = json::object();
    Writer w{o};
    bind(w, val);
    return o;
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError("config: " + msg);
}

}  // namespace

void RunConfig::validate() const {
  avm::validate(fusion.weights, fusion.mode);
  tracking.icp.validate();
  require(tracking.min_inlier_fraction >= 0 && tracking.min_inlier_fraction <= 1,
          "tracking.min_inlier_fraction must lie in [0, 1]");
  require(tracking.max_rms > 0, "tracking.max_rms must be positive");
  require(tracking.refine_radius >= 0, "tracking.refine_radius must be >= 0");
  require(tracking.degeneracy_ratio >= 0 && tracking.degeneracy_ratio < 1,
          "tracking.degeneracy_ratio must lie in [0, 1)");
  mapping.validate();
  spq.validate();
  loop.validate();
  require(backend.submaps_per_episode >= 1, "backend.submaps_per_episode must be >= 1");
  require(backend.max_candidates >= 1, "backend.max_candidates must be >= 1");
  require(backend.information_condition >= 1, "backend.information_condition must be >= 1");
  require(backend.optimizer.max_iterations >= 1, "backend.optimizer.max_iterations must be >= 1");
  require(backend.optimizer.initial_damping > 0 && backend.optimizer.max_damping > backend.optimizer.initial_damping,
          "backend.optimizer damping must satisfy 0 < initial < max");
  require(backend.optimizer.huber_delta > 0, "backend.optimizer.huber_delta must be positive");
  const auto& pn = backend.preintegration;
  require(pn.long_sigma > 0 && pn.lat_sigma > 0 && pn.yaw_sigma > 0 && pn.scale_sigma >= 0 &&
              pn.differential_scale_sigma >= 0 && pn.common_scale_sigma >= 0,
          "backend.preintegration sigmas must be positive");
  template_from_string(sim.world_template);
  require(sim.laps > 0, "sim.laps must be positive");
  sim.noise.validate();
  const auto& o = sim.options;
  require(o.rates.frame_hz > 0 && o.rates.odometry_hz > 0, "sim.options.rates must be positive");
  require(o.footprint_length > 0 && o.footprint_width > 0, "sim.options footprint must be positive");
  require(o.sample_spacing > 0 && o.wheel_radius > 0 && o.track > 0,
          "sim.options spacing, wheel radius and track must be positive");
  require(o.mask_stride >= 1, "sim.options.mask_stride must be >= 1");
  require(!output.empty(), "output must not be empty");
}

RunConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  read(j, cfg, "");
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string dump_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  return write(copy).dump(2) + "\n";
}

RunConfig visual_only(RunConfig cfg) {
  cfg.backend.kinematic_edges = false;
  cfg.backend.use_spq = false;
  return cfg;
}

}  // namespace avm::app
