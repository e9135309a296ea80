#include "avm/app/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "avm/errors.hpp"
#include "avm/matching.hpp"

namespace avm::app {

using nlohmann::ordered_json;

DistanceErrors distance_error_metrics(const std::vector<double>& world, const std::vector<double>& map) {
  if (world.size() != map.size()) throw InputError("distance_error_metrics: length mismatch");
  if (world.empty()) throw InputError("distance_error_metrics: no pairs");
  DistanceErrors d;
  d.count = world.size();
  double sum = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < world.size(); ++i) {
    const double e = std::abs(world[i] - map[i]);
    sum += e;
    sq += e * e;
    d.max = std::max(d.max, e);
  }
  d.mean = sum / static_cast<double>(d.count);
  d.rmse = std::sqrt(sq / static_cast<double>(d.count));
  return d;
}

Pose2 align_se2(const std::vector<Vec2>& src, const std::vector<Vec2>& dst) {
  if (src.size() != dst.size() || src.empty()) throw InputError("align_se2: need equal, non-empty point lists");
  try {
    return rigid_align_2d(src, dst);
  } catch (const DegenerateError&) {
    // All source points coincide: only the translation is observable.
    Vec2 cs = Vec2::Zero(), cd = Vec2::Zero();
    for (std::size_t i = 0; i < src.size(); ++i) {
      cs += src[i];
      cd += dst[i];
    }
    const Vec2 t = (cd - cs) / static_cast<double>(src.size());
    return {t.x(), t.y(), 0.0};
  }
}

std::optional<Pose2> interpolate_pose(const std::vector<StampedPose>& traj, double t, double max_dt) {
  if (traj.empty()) return std::nullopt;
  auto it = std::lower_bound(traj.begin(), traj.end(), t, [](const StampedPose& p, double v) { return p.t < v; });
  if (it != traj.end() && std::abs(it->t - t) <= 1e-9) return it->pose;
  if (it == traj.begin()) {
    if (std::abs(it->t - t) <= max_dt) return it->pose;
    return std::nullopt;
  }
  if (it == traj.end()) {
    const auto& last = traj.back();
    if (std::abs(last.t - t) <= max_dt) return last.pose;
    return std::nullopt;
  }
  const StampedPose& a = *(it - 1);
  const StampedPose& b = *it;
  if (std::min(t - a.t, b.t - t) > max_dt) return std::nullopt;
  const double f = (t - a.t) / (b.t - a.t);
  const Vec2 p = a.pose.translation() + f * (b.pose.translation() - a.pose.translation());
  return Pose2(p.x(), p.y(), a.pose.yaw + f * wrap_angle(b.pose.yaw - a.pose.yaw));
}

TrajectoryErrors trajectory_error(const std::vector<StampedPose>& estimate,
                                  const std::vector<StampedPose>& groundtruth, double segment, double max_dt) {
  std::vector<Pose2> est, gt;
  for (const auto& e : estimate) {
    if (auto g = interpolate_pose(groundtruth, e.t, max_dt)) {
      est.push_back(e.pose);
      gt.push_back(*g);
    }
  }
  if (est.size() < 2) throw InputError("trajectory_error: fewer than 2 aligned pose pairs");

  TrajectoryErrors r;
  r.pairs = est.size();
  std::vector<Vec2> src, dst;
  for (std::size_t i = 0; i < est.size(); ++i) {
    src.push_back(est[i].translation());
    dst.push_back(gt[i].translation());
  }
  r.alignment = align_se2(src, dst);
  double sq = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) sq += (r.alignment.apply(src[i]) - dst[i]).squaredNorm();
  r.ate_rmse = std::sqrt(sq / static_cast<double>(est.size()));

  std::vector<double> travel{0.0};
  for (std::size_t i = 1; i < gt.size(); ++i) travel.push_back(travel.back() + (dst[i] - dst[i - 1]).norm());
  double drift = 0.0, drift_yaw = 0.0;
  std::size_t j = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    j = std::max(j, i + 1);
    while (j < gt.size() && travel[j] - travel[i] < segment) ++j;
    if (j >= gt.size()) break;
    const double len = travel[j] - travel[i];
    const Pose2 de = between(est[i], est[j]);
    const Pose2 dg = between(gt[i], gt[j]);
    drift += (de.translation() - dg.translation()).norm() / len;
    drift_yaw += std::abs(wrap_angle(de.yaw - dg.yaw)) / len;
    ++r.segments;
  }
  if (r.segments > 0) {
    r.rpe_per_meter = drift / static_cast<double>(r.segments);
    r.rpe_yaw_per_meter = drift_yaw / static_cast<double>(r.segments);
  }
  return r;
}

std::vector<Landmark> map_landmarks(const std::vector<Landmark>& truth, const std::vector<StampedPose>& kf_estimate,
                                    const std::vector<StampedPose>& groundtruth, double max_dt) {
  std::vector<std::pair<Pose2, Pose2>> kfs;  // (estimate, truth)
  for (const auto& e : kf_estimate) {
    if (auto g = interpolate_pose(groundtruth, e.t, max_dt)) kfs.emplace_back(e.pose, *g);
  }
  if (kfs.empty()) throw InputError("map_landmarks: no keyframe aligns with ground truth");
  std::vector<Landmark> out;
  for (const auto& lm : truth) {
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < kfs.size(); ++i) {
      const double d = (kfs[i].second.translation() - lm.p).squaredNorm();
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    const Vec2 local = inverse(kfs[best].second).apply(lm.p);
    out.push_back({lm.name, kfs[best].first.apply(local)});
  }
  return out;
}

// ----------------------------------------------------------------- closures

void write_closures(const std::filesystem::path& path, const std::vector<ClosureRecord>& c) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "# avm-closures v1\n# kf_time anchor_time keyframe_id submap_id x y yaw rms inlier_fraction\n"
      << std::setprecision(17);
  for (const auto& r : c) {
    out << r.kf_time << " " << r.anchor_time << " " << r.keyframe_id << " " << r.submap_id << " " << r.transform.x
        << " " << r.transform.y << " " << r.transform.yaw << " " << r.rms << " " << r.inlier_fraction << "\n";
  }
}

std::vector<ClosureRecord> read_closures(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<ClosureRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (n == 1) {
      if (line != "# avm-closures v1") throw SchemaError(path.string(), n, "expected header '# avm-closures v1'");
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ClosureRecord r;
    double x, y, yaw;
    if (!(ss >> r.kf_time >> r.anchor_time >> r.keyframe_id >> r.submap_id >> x >> y >> yaw >> r.rms >>
          r.inlier_fraction)) {
      throw SchemaError(path.string(), n, "expected 9 fields");
    }
    r.transform = Pose2(x, y, yaw);
    out.push_back(r);
  }
  if (n == 0) throw SchemaError(path.string(), 1, "empty file");
  return out;
}

bool is_true_closure(const ClosureRecord& c, const std::vector<StampedPose>& groundtruth, double max_translation,
                     double max_yaw) {
  const auto a = interpolate_pose(groundtruth, c.anchor_time, 0.05);
  const auto k = interpolate_pose(groundtruth, c.kf_time, 0.05);
  if (!a || !k) throw InputError("is_true_closure: closure times not covered by ground truth");
  const Pose2 truth = between(*a, *k);
  return (truth.translation() - c.transform.translation()).norm() <= max_translation &&
         std::abs(wrap_angle(truth.yaw - c.transform.yaw)) <= max_yaw;
}

ClosureStats closure_stats(const std::vector<ClosureRecord>& closures, std::size_t candidates,
                           const std::vector<StampedPose>& groundtruth) {
  ClosureStats s;
  s.candidates = candidates;
  s.accepted = closures.size();
  for (const auto& c : closures) {
    if (is_true_closure(c, groundtruth)) {
      ++s.true_positives;
    } else {
      ++s.false_positives;
    }
  }
  if (s.accepted > 0) s.precision = static_cast<double>(s.true_positives) / static_cast<double>(s.accepted);
  if (candidates > 0) s.recall = static_cast<double>(s.true_positives) / static_cast<double>(candidates);
  return s;
}

// ------------------------------------------------------------------- report

EvalReport evaluate_run(const std::filesystem::path& run_dir, const std::filesystem::path& dataset_dir,
                        const std::vector<std::string>& landmark_names) {
  namespace fs = std::filesystem;
  const fs::path gt_path = dataset_dir / "groundtruth.txt";
  if (!fs::exists(gt_path)) throw InputError("evaluate_run: dataset has no groundtruth.txt");
  const auto gt = read_trajectory(gt_path);

  EvalReport r;
  for (std::size_t i = 1; i < gt.size(); ++i) {
    r.trajectory_length += (gt[i].pose.translation() - gt[i - 1].pose.translation()).norm();
  }
  const auto kf_front = read_trajectory(run_dir / "keyframes_frontend.txt");
  const auto kf_opt = read_trajectory(run_dir / "keyframes.txt");
  const auto frames = read_trajectory(run_dir / "trajectory.txt");
  r.frontend = trajectory_error(kf_front, gt);
  r.optimized = trajectory_error(kf_opt, gt);
  r.frames = trajectory_error(frames, gt);

  // Endpoint drift in the frame of the first tracked pose.
  if (auto g0 = interpolate_pose(gt, frames.front().t, 0.05)) {
    if (auto g1 = interpolate_pose(gt, frames.back().t, 0.05)) {
      const Pose2 de = between(frames.front().pose, frames.back().pose);
      const Pose2 dg = between(*g0, *g1);
      r.frontend_endpoint_drift = (de.translation() - dg.translation()).norm();
    }
  }

  const fs::path lm_path = dataset_dir / "landmarks.txt";
  if (fs::exists(lm_path)) {
    std::vector<Landmark> truth = read_landmarks(lm_path);
    if (!landmark_names.empty()) {
      std::vector<Landmark> picked;
      for (const auto& n : landmark_names) {
        auto it = std::find_if(truth.begin(), truth.end(), [&](const Landmark& l) { return l.name == n; });
        if (it == truth.end()) throw LookupError("unknown landmark " + n);
        picked.push_back(*it);
      }
      truth = picked;
    }
    const auto mapped = map_landmarks(truth, kf_opt, gt);
    std::vector<double> w, m;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      for (std::size_t j = i + 1; j < truth.size(); ++j) {
        LandmarkPairError e{truth[i].name, truth[j].name, (truth[i].p - truth[j].p).norm(),
                            (mapped[i].p - mapped[j].p).norm()};
        w.push_back(e.world);
        m.push_back(e.map);
        r.pairs.push_back(e);
      }
    }
    if (!w.empty()) r.distance = distance_error_metrics(w, m);
  }

  const fs::path closures_path = run_dir / "closures.txt";
  const fs::path summary_path = run_dir / "run_summary.json";
  if (fs::exists(closures_path) && fs::exists(summary_path)) {
    std::ifstream in(summary_path);
    const auto summary = nlohmann::json::parse(in);
    const std::size_t candidates = summary.value("loop_candidates", std::size_t{0});
    r.closures = closure_stats(read_closures(closures_path), candidates, gt);
  }
  return r;
}

namespace {

double round9(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

ordered_json traj_json(const TrajectoryErrors& t) {
  ordered_json j;
  j["ate_rmse"] = round9(t.ate_rmse);
  j["rpe_per_meter"] = round9(t.rpe_per_meter);
  j["rpe_yaw_per_meter"] = round9(t.rpe_yaw_per_meter);
  j["pairs"] = t.pairs;
  j["segments"] = t.segments;
  return j;
}

}  // namespace

std::string report_json(const EvalReport& r) {
  ordered_json j;
  j["format"] = "avm-report v1";
  ordered_json pairs = ordered_json::array();
  for (const auto& p : r.pairs) {
    ordered_json e;
    e["a"] = p.a;
    e["b"] = p.b;
    e["world"] = round9(p.world);
    e["map"] = round9(p.map);
    e["error"] = round9(std::abs(p.world - p.map));
    pairs.push_back(e);
  }
  j["landmark_pairs"] = pairs;
  if (r.distance) {
    j["distance_error"] = {{"mean", round9(r.distance->mean)},
                           {"max", round9(r.distance->max)},
                           {"rmse", round9(r.distance->rmse)},
                           {"count", r.distance->count}};
  }
  if (r.frontend) j["frontend_keyframes"] = traj_json(*r.frontend);
  if (r.optimized) j["optimized_keyframes"] = traj_json(*r.optimized);
  if (r.frames) j["frontend_frames"] = traj_json(*r.frames);
  j["frontend_endpoint_drift"] = round9(r.frontend_endpoint_drift);
  j["trajectory_length"] = round9(r.trajectory_length);
  if (r.closures) {
    const auto& c = *r.closures;
    j["loop_closures"] = {{"candidates", c.candidates},         {"accepted", c.accepted},
                          {"true_positives", c.true_positives}, {"false_positives", c.false_positives},
                          {"precision", round9(c.precision)},   {"recall", round9(c.recall)}};
  }
  return j.dump(2) + "\n";
}

}  // namespace avm::app
