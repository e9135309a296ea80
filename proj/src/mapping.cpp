#include "avm/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "avm/errors.hpp"

namespace avm {

void MappingConfig::validate() const {
  if (submap_capacity < 2) throw ConfigError("submap capacity must be at least 2");
  if (!(overlap_fraction > 0.0 && overlap_fraction < 1.0)) throw ConfigError("overlap fraction must lie in (0, 1)");
  if (!(downsample_cell > 0.0) || !(difference_radius > 0.0) || !(target_cell > 0.0)) {
    throw ConfigError("mapping cells and radii must be positive");
  }
  if (!(keyframe_difference >= 0.0 && keyframe_difference < 1.0)) {
    throw ConfigError("keyframe difference threshold must lie in [0, 1)");
  }
}

std::size_t MappingConfig::overlap_start() const {
  const auto shared = static_cast<std::size_t>(std::lround(overlap_fraction * static_cast<double>(submap_capacity)));
  return submap_capacity - std::min(shared, submap_capacity - 1);
}

const char* to_string(SubmapState s) {
  switch (s) {
    case SubmapState::Active: return "active";
    case SubmapState::Finalizing: return "finalizing";
    case SubmapState::Finalized: return "finalized";
  }
  return "?";
}

bool keyframe_filter(const SemanticFrame& candidate, const Keyframe* last_kf, const Pose2& relative_pose,
                     const MappingConfig& cfg) {
  if (last_kf == nullptr) return true;
  const SemanticFrame ds = downsample(candidate, cfg.downsample_cell);
  return frame_difference(last_kf->frame, ds, relative_pose, cfg.difference_radius) > cfg.keyframe_difference;
}

// -------------------------------------------------------------- GlobalMap

void GlobalMap::add(const Submap& s) {
  submaps_[s.id] = s;
  dirty_ = true;
}

void GlobalMap::update(const Submap& s) {
  auto it = submaps_.find(s.id);
  if (it == submaps_.end()) throw LookupError("global map has no submap " + std::to_string(s.id));
  it->second = s;
  dirty_ = true;
}

const std::vector<LabeledPoint>& GlobalMap::merged_cloud() const {
  if (!dirty_) return merged_;
  merged_.clear();
  for (const auto& [id, s] : submaps_) {
    for (const auto& p : s.cloud) {
      const Vec2 q = s.anchor.apply(p.xy());
      merged_.push_back({Point3(q.x(), q.y(), 0.0), p.label});
    }
  }
  dirty_ = false;
  return merged_;
}

// ----------------------------------------------------------------- Mapper

Mapper::Mapper(MappingConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  current_ = new_submap();
  next_ = new_submap();
}

std::uint64_t Mapper::new_submap() {
  Submap s;
  s.id = next_submap_id_++;
  submaps_[s.id] = s;
  return s.id;
}

std::pair<const Keyframe*, InsertResult> Mapper::add_keyframe(double timestamp, const Pose2& frontend_pose,
                                                              const SemanticFrame& frame, double travel,
                                                              const std::optional<Pose2>& estimate) {
  Keyframe kf;
  kf.id = next_kf_id_;
  kf.timestamp = timestamp;
  kf.frontend_pose = frontend_pose;
  kf.pose = estimate.value_or(frontend_pose);
  kf.travel = travel;
  kf.frame = downsample(frame, cfg_.downsample_cell);
  kf.census = category_census(kf.frame);
  const std::uint64_t id = kf.id;
  InsertResult r = insert_keyframe(std::move(kf));
  return {&keyframes_.at(id), r};
}

InsertResult Mapper::insert_keyframe(Keyframe kf) {
  if (!keyframes_.empty() && kf.id <= keyframes_.rbegin()->first) {
    throw StructuralError("keyframe ids must increase");
  }
  next_kf_id_ = kf.id + 1;
  const std::uint64_t id = kf.id;
  const Keyframe& stored = keyframes_.emplace(id, std::move(kf)).first->second;

  InsertResult r;
  Submap& cur = submaps_.at(*current_);
  const bool into_next = cur.keyframe_ids.size() >= cfg_.overlap_start();
  auto add_to = [&](Submap& s) {
    if (s.keyframe_ids.empty()) r.created.push_back(s.id);
    append(s, stored);
    r.submaps.push_back(s.id);
  };
  add_to(cur);
  if (into_next) add_to(submaps_.at(*next_));

  if (cur.keyframe_ids.size() >= cfg_.submap_capacity) {
    cur.state = SubmapState::Finalizing;
    r.finalizing = cur.id;
    current_ = next_;
    next_ = new_submap();
  }
  refresh_active_target();
  return r;
}

void Mapper::append(Submap& s, const Keyframe& kf) {
  if (s.keyframe_ids.empty()) {
    s.anchor = kf.pose;
    s.frontend_anchor = kf.frontend_pose;
    s.travel_min = kf.travel;
  }
  s.keyframe_ids.push_back(kf.id);
  s.travel_max = kf.travel;
  s.cloud = rebuild_cloud(s, true);
  s.census = category_census(s.cloud);
}

std::vector<LabeledPoint> Mapper::rebuild_cloud(const Submap& s, bool use_frontend) const {
  std::vector<LabeledPoint> pts;
  const Pose2 anchor = use_frontend ? s.frontend_anchor : s.anchor;
  for (std::uint64_t kid : s.keyframe_ids) {
    const Keyframe& kf = keyframes_.at(kid);
    const Pose2 rel = between(anchor, use_frontend ? kf.frontend_pose : kf.pose);
    for (const auto& p : kf.frame.points()) {
      const Vec2 q = rel.apply(p.xy());
      pts.push_back({Point3(q.x(), q.y(), 0.0), p.label});
    }
  }
  return downsample_points(pts, cfg_.downsample_cell);
}

void Mapper::refresh_active_target() {
  const Submap& cur = submaps_.at(*current_);
  // A freshly promoted current submap may still be empty only before the
  // first keyframe; keep the previous target in that case.
  if (cur.keyframe_ids.empty()) return;
  std::vector<LabeledPoint> pts;
  pts.reserve(cur.cloud.size());
  for (const auto& p : cur.cloud) {
    const Vec2 q = cur.frontend_anchor.apply(p.xy());
    pts.push_back({Point3(q.x(), q.y(), 0.0), p.label});
  }
  active_target_ = std::make_shared<const TargetCloud>(std::move(pts), cfg_.target_cell);
}

void Mapper::finalize_submap(std::uint64_t id) {
  Submap& s = submaps_.at(id);
  if (s.state == SubmapState::Finalized) return;
  if (s.keyframe_ids.empty()) throw StructuralError("cannot finalize an empty submap");
  s.cloud = rebuild_cloud(s, false);
  s.census = category_census(s.cloud);
  s.state = SubmapState::Finalized;
  s.target = std::make_shared<const TargetCloud>(s.cloud, cfg_.target_cell);
  global_.add(s);
}

std::vector<std::uint64_t> Mapper::finalize_all() {
  std::vector<std::uint64_t> done;
  for (auto& [id, s] : submaps_) {
    if (s.state != SubmapState::Finalized && !s.keyframe_ids.empty()) {
      finalize_submap(id);
      done.push_back(id);
    }
  }
  return done;
}

void Mapper::apply_poses(const std::map<std::uint64_t, Pose2>& keyframe_poses,
                         const std::map<std::uint64_t, Pose2>& submap_anchors) {
  std::set<std::uint64_t> moved_kf, moved_sub;
  for (const auto& [id, p] : keyframe_poses) {
    auto it = keyframes_.find(id);
    if (it == keyframes_.end() || it->second.pose == p) continue;
    it->second.pose = p;
    moved_kf.insert(id);
  }
  for (const auto& [id, p] : submap_anchors) {
    auto it = submaps_.find(id);
    if (it == submaps_.end() || it->second.anchor == p) continue;
    it->second.anchor = p;
    moved_sub.insert(id);
  }
  for (auto& [id, s] : submaps_) {
    if (s.state != SubmapState::Finalized) continue;
    const bool touched = moved_sub.count(id) != 0 ||
                         std::any_of(s.keyframe_ids.begin(), s.keyframe_ids.end(),
                                     [&](std::uint64_t k) { return moved_kf.count(k) != 0; });
    if (!touched) continue;
    s.cloud = rebuild_cloud(s, false);
    s.census = category_census(s.cloud);
    s.target = std::make_shared<const TargetCloud>(s.cloud, cfg_.target_cell);
    global_.update(s);
  }
}

const Keyframe* Mapper::last_keyframe() const {
  return keyframes_.empty() ? nullptr : &keyframes_.rbegin()->second;
}

const Keyframe& Mapper::keyframe(std::uint64_t id) const {
  auto it = keyframes_.find(id);
  if (it == keyframes_.end()) throw LookupError("no keyframe " + std::to_string(id));
  return it->second;
}

const Submap& Mapper::submap(std::uint64_t id) const {
  auto it = submaps_.find(id);
  if (it == submaps_.end()) throw LookupError("no submap " + std::to_string(id));
  return it->second;
}

// ---------------------------------------------------------------- exports

void write_map_cloud(const std::filesystem::path& path, const std::vector<LabeledPoint>& pts) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "# avm-map v1\n# points " << pts.size() << "\n# x y label_id\n" << std::setprecision(10);
  for (const auto& p : pts) out << p.p.x() << " " << p.p.y() << " " << static_cast<int>(p.label) << "\n";
}

std::vector<LabeledPoint> read_map_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<LabeledPoint> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double x, y;
    int id;
    if (!(ss >> x >> y >> id) || id < 0 || id >= static_cast<int>(kLabelCount)) {
      throw SchemaError(path.string(), lineno, "expected '<x> <y> <label_id>'");
    }
    pts.push_back({Point3(x, y, 0.0), static_cast<SemanticLabel>(id)});
  }
  return pts;
}

void write_trajectory(const std::filesystem::path& path, const std::vector<StampedPose>& traj) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "# avm-trajectory v1\n# t x y yaw\n" << std::setprecision(12);
  for (const auto& s : traj) out << s.t << " " << s.pose.x << " " << s.pose.y << " " << s.pose.yaw << "\n";
}

std::vector<StampedPose> read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<StampedPose> traj;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, x, y, yaw;
    if (!(ss >> t >> x >> y >> yaw)) throw SchemaError(path.string(), lineno, "expected '<t> <x> <y> <yaw>'");
    if (!traj.empty() && !(t > traj.back().t)) {
      throw SchemaError(path.string(), lineno, "trajectory timestamps must strictly increase");
    }
    traj.push_back({t, Pose2(x, y, yaw)});
  }
  return traj;
}

}  // namespace avm
