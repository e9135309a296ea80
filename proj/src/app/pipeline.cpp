#include "avm/app/pipeline.hpp"

#include <chrono>
#include <deque>
#include <fstream>
#include <sstream>
#include <thread>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "avm/app/render.hpp"
#include "avm/errors.hpp"
#include "avm/fusion.hpp"
#include "avm/loop.hpp"
#include "avm/matching.hpp"

namespace avm::app {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// Fallback for keyframes whose tracking ICP failed: an edge about as strong
// as a few metres of odometry.
Mat3 weak_information() { return Vec3(100.0, 100.0, 1e4).asDiagonal(); }

// Removes the weak translation direction from a tracking information
// matrix when the xy block is nearly rank one.
Mat3 drop_degenerate(const Mat3& info, double ratio) {
  if (ratio <= 0) return info;
  Eigen::SelfAdjointEigenSolver<Mat2> es(info.topLeftCorner<2, 2>());
  if (!(es.eigenvalues()(0) < ratio * es.eigenvalues()(1))) return info;
  const Vec2 weak = es.eigenvectors().col(0);
  Mat3 p = Mat3::Identity();
  p.topLeftCorner<2, 2>() -= weak * weak.transpose();
  return p * info * p;
}

// Covariance of (x, y, yaw) with its xy block rotated by yaw.
Mat3 rotate_cov(const Mat3& cov, double yaw) {
  Mat3 r = Mat3::Identity();
  r.topLeftCorner<2, 2>() = Eigen::Rotation2Dd(yaw).toRotationMatrix();
  return r * cov * r.transpose();
}

struct Chain {
  Pose2 rel;  // last member keyframe in the anchor frame
  Mat3 cov = Mat3::Zero();
};

std::string queue_state(const char* name, std::size_t n, double first, double last) {
  std::ostringstream ss;
  ss << name << ": " << n << " samples";
  if (n > 0) ss << " [" << first << ", " << last << "]";
  return ss.str();
}

[[noreturn]] void starve(const Dataset& d, const FusionConfig& f) {
  std::ostringstream ss;
  ss << "init starvation: no frame is bracketed by the selected sensor streams; "
     << queue_state("frames", d.frames.size(), d.frames.empty() ? 0 : d.frames.front().timestamp(),
                    d.frames.empty() ? 0 : d.frames.back().timestamp())
     << "; "
     << queue_state(f.mode.use_wheel ? "wheel" : "wheel (unused)", d.wheel.size(),
                    d.wheel.empty() ? 0 : d.wheel.front().t, d.wheel.empty() ? 0 : d.wheel.back().t)
     << "; "
     << queue_state(f.mode.use_imu ? "imu" : "imu (unused)", d.imu.size(), d.imu.empty() ? 0 : d.imu.front().t,
                    d.imu.empty() ? 0 : d.imu.back().t);
  throw InitStarvationError(ss.str());
}

class Slam {
 public:
  Slam(const Dataset& d, const RunConfig& cfg)
      : d_(d), cfg_(cfg), predictor_(cfg.fusion), mapper_(cfg.mapping), sched_(cfg.backend.submaps_per_episode) {}

  SlamResult run() {
    const auto start = Clock::now();
    std::deque<SemanticFrame> queue(d_.frames.begin(), d_.frames.end());
    const auto init = initialize(queue, d_.wheel, d_.imu, cfg_.fusion);
    if (!init) starve(d_, cfg_.fusion);
    predictor_.reset(init->state);
    out_.stats.dropped_frames = init->dropped_frames;
    out_.stats.t0 = init->t0;
    while (wheel_i_ < d_.wheel.size() && d_.wheel[wheel_i_].t <= init->t0) ++wheel_i_;
    while (imu_i_ < d_.imu.size() && d_.imu[imu_i_].t <= init->t0) ++imu_i_;

    const auto wall0 = Clock::now();
    for (const SemanticFrame& f : queue) {
      if (cfg_.realtime) {
        std::this_thread::sleep_until(wall0 + std::chrono::duration_cast<Clock::duration>(
                                                  std::chrono::duration<double>(f.timestamp() - init->t0)));
      }
      process(f);
    }

    for (std::uint64_t id : pending_finalize()) finalize(id);
    if (cfg_.backend.optimize) episode();

    for (const auto& [id, kf] : mapper_.keyframes()) {
      out_.keyframes_frontend.push_back({kf.timestamp, kf.frontend_pose});
      out_.keyframes.push_back({kf.timestamp, kf.pose});
    }
    out_.map_cloud = mapper_.global_map().merged_cloud();
    out_.stats.frames = out_.frames.size();
    out_.stats.keyframes = mapper_.keyframes().size();
    out_.stats.submaps = mapper_.global_map().submaps().size();
    out_.stats.final_cost = total_cost(graph_);
    out_.graph = graph_;
    out_.timing.total = seconds_since(start);
    return std::move(out_);
  }

 private:
  void ingest_until(double t) {
    // Merge both streams in time order; wheel first on ties.
    while (true) {
      const bool w = wheel_i_ < d_.wheel.size() && d_.wheel[wheel_i_].t <= t;
      const bool m = imu_i_ < d_.imu.size() && d_.imu[imu_i_].t <= t;
      if (!w && !m) break;
      if (w && (!m || d_.wheel[wheel_i_].t <= d_.imu[imu_i_].t)) {
        predictor_.ingest_wheel(d_.wheel[wheel_i_++]);
      } else {
        predictor_.ingest_imu(d_.imu[imu_i_++]);
      }
    }
    predictor_.advance_to(t);
  }

  void process(const SemanticFrame& raw) {
    auto t_track = Clock::now();
    const double t = raw.timestamp();
    ingest_until(t);
    const SemanticFrame frame = downsample(raw, cfg_.mapping.downsample_cell);
    Pose2 pose = predictor_.snapshot().pose;

    std::optional<Mat3> info;  // tracking information, target (tracking) frame
    const auto target = mapper_.active_target_cloud();
    if (target && !target->empty() && !frame.empty()) {
      IcpResult r = icp_register(frame, *target, pose, cfg_.tracking.icp);
      if (cfg_.tracking.refine_radius > 0) {
        IcpConfig fine = cfg_.tracking.icp;
        fine.correspondence_radius = cfg_.tracking.refine_radius;
        r = icp_register(frame, *target, r.transform, fine);
      }
      if (r.inlier_count >= cfg_.tracking.icp.min_inliers && r.inlier_fraction >= cfg_.tracking.min_inlier_fraction &&
          r.rms_residual <= cfg_.tracking.max_rms) {
        info = floor_information(drop_degenerate(r.information, cfg_.tracking.degeneracy_ratio),
                                 cfg_.backend.information_condition);
        if (cfg_.tracking.visual_updates) {
          predictor_.update_pose(t, r.transform,
                                 information_to_covariance(r.information, cfg_.backend.information_condition));
          pose = predictor_.snapshot().pose;
        }
      } else {
        ++out_.stats.tracking_failures;
      }
    }
    if (!out_.frames.empty()) travel_ += (pose.translation() - out_.frames.back().pose.translation()).norm();
    out_.frames.push_back({t, pose});
    out_.timing.tracking += seconds_since(t_track);

    auto t_map = Clock::now();
    const Keyframe* last = mapper_.last_keyframe();
    const Pose2 rel = last ? between(last->frontend_pose, pose) : Pose2();
    if (!keyframe_filter(frame, last, rel, cfg_.mapping)) {
      out_.timing.mapping += seconds_since(t_map);
      return;
    }
    const std::optional<Keyframe> prev = last ? std::optional<Keyframe>(*last) : std::nullopt;
    const std::optional<Pose2> estimate = prev ? std::optional<Pose2>(compose(prev->pose, rel)) : std::nullopt;
    const auto [kf, ins] = mapper_.add_keyframe(t, pose, frame, travel_, estimate);
    add_keyframe_to_graph(*kf, ins, prev, rel, info);
    out_.timing.mapping += seconds_since(t_map);

    detect_loop(*kf);

    if (ins.finalizing) finalize(*ins.finalizing);
    if (cfg_.backend.optimize && sched_.pending()) episode();
  }

  void add_keyframe_to_graph(const Keyframe& kf, const InsertResult& ins, const std::optional<Keyframe>& prev,
                             const Pose2& rel, const std::optional<Mat3>& info) {
    graph_.add_node(kf.id, NodeKind::Keyframe, kf.pose);
    for (std::uint64_t sid : ins.created) {
      graph_.add_node(submap_node(sid), NodeKind::Submap, mapper_.submap(sid).anchor);
    }
    const double cond = cfg_.backend.information_condition;
    const Mat3 body = info ? floor_information(information_in_body_frame(*info, kf.frontend_pose), cond)
                           : weak_information();
    if (prev) {
      // Both ends carry their own tracking error.
      graph_.add_edge({prev->id, kf.id, EdgeKind::VisualAdjacent, rel, 0.5 * body});
      if (cfg_.backend.kinematic_edges) {
        const auto pre = preintegrate(d_.wheel, d_.imu, prev->timestamp, kf.timestamp, cfg_.fusion,
                                      cfg_.backend.preintegration);
        const Mat3 pinfo = floor_information(pre.cov.inverse(), cond);
        graph_.add_edge({prev->id, kf.id, EdgeKind::Kinematic, pre.delta, pinfo});
      }
    }
    // Keyframe-to-submap edges carry the tracking uncertainty accumulated
    // along the chain of keyframes since the anchor.
    const Mat3 adj_cov = 2.0 * information_to_covariance(body, cond);
    for (std::uint64_t sid : ins.submaps) {
      const Submap& s = mapper_.submap(sid);
      const Pose2 meas = between(s.frontend_anchor, kf.frontend_pose);
      auto& ch = chains_[sid];
      if (s.keyframe_ids.front() == kf.id) {
        ch = Chain{};
        graph_.add_edge({submap_node(sid), kf.id, EdgeKind::VisualSubmap, meas, Vec3::Constant(1e8).asDiagonal()});
        continue;
      }
      const Mat3 ja = compose_jacobian_a(ch.rel, rel), jb = compose_jacobian_b(ch.rel);
      const Mat3 step = rotate_cov(adj_cov, rel.yaw);  // keyframe frame -> previous keyframe frame
      ch.cov = ja * ch.cov * ja.transpose() + jb * step * jb.transpose();
      ch.rel = compose(ch.rel, rel);
      graph_.add_edge({submap_node(sid), kf.id, EdgeKind::VisualSubmap, meas,
                       floor_information(rotate_cov(ch.cov, -meas.yaw).inverse(), cond)});
    }
  }

  void detect_loop(const Keyframe& kf) {
    if (!cfg_.backend.loop_closure) return;
    auto t_loop = Clock::now();
    const bool spq = cfg_.backend.use_spq;
    if (spq && !spq_qualify(kf.census, cfg_.spq).pass) {
      out_.timing.loop += seconds_since(t_loop);
      return;
    }
    ++out_.stats.loop_queries;
    const auto cands = find_loop_candidates(kf, kf.pose, mapper_.global_map(), cfg_.spq, spq);
    const std::size_t n = std::min(cands.size(), cfg_.backend.max_candidates);
    for (std::size_t i = 0; i < n; ++i) {
      const LoopCandidate& c = cands[i];
      ++out_.stats.loop_candidates;
      const Submap& s = mapper_.global_map().submaps().at(c.submap_id);
      const auto cl = verify_loop(c, kf.frame, *s.target, cfg_.loop);
      if (!cl) continue;
      const Mat3 w = floor_information(information_in_body_frame(cl->information, cl->transform),
                                       cfg_.backend.information_condition);
      graph_.add_edge({submap_node(c.submap_id), kf.id, EdgeKind::Loop, cl->transform, w});
      out_.closures.push_back({kf.timestamp, mapper_.keyframe(s.keyframe_ids.front()).timestamp, kf.id, c.submap_id,
                               cl->transform, cl->rms, cl->inlier_fraction});
      sched_.on_loop_closure();
      break;
    }
    out_.timing.loop += seconds_since(t_loop);
  }

  std::vector<std::uint64_t> pending_finalize() const {
    std::vector<std::uint64_t> ids;
    for (const auto& [id, s] : mapper_.submaps()) {
      if (s.state != SubmapState::Finalized && !s.keyframe_ids.empty()) ids.push_back(id);
    }
    return ids;
  }

  void finalize(std::uint64_t sid) {
    auto t_opt = Clock::now();
    if (cfg_.backend.local_optimization) local_solve(sid);
    out_.timing.optimization += seconds_since(t_opt);
    auto t_map = Clock::now();
    mapper_.finalize_submap(sid);
    sched_.on_submap_finalized();
    out_.timing.mapping += seconds_since(t_map);
  }

  // Pose-graph solve over one submap: its anchor (held fixed), its keyframes
  // and the edges among them.
  void local_solve(std::uint64_t sid) {
    const Submap& s = mapper_.submap(sid);
    PoseGraph local;
    local.add_node(GraphNode{submap_node(sid), NodeKind::Submap, graph_.node(submap_node(sid)).pose, true});
    for (std::uint64_t k : s.keyframe_ids) local.add_node(k, NodeKind::Keyframe, graph_.node(k).pose);
    for (const auto& e : graph_.edges()) {
      if (e.kind == EdgeKind::Loop) continue;
      if (local.has_node(e.from) && local.has_node(e.to)) local.add_edge(e);
    }
    optimize(local, cfg_.backend.optimizer);
    std::map<std::uint64_t, Pose2> kfs;
    for (std::uint64_t k : s.keyframe_ids) {
      const Pose2& p = local.node(k).pose;
      graph_.set_pose(k, p);
      kfs[k] = p;
    }
    mapper_.apply_poses(kfs, {});
    ++out_.stats.local_solves;
  }

  void episode() {
    if (!sched_.begin_episode()) return;
    auto t_opt = Clock::now();
    optimize(graph_, cfg_.backend.optimizer);
    std::map<std::uint64_t, Pose2> kfs, anchors;
    for (const auto& n : graph_.nodes()) {
      if (n.kind == NodeKind::Keyframe) {
        kfs[n.id] = n.pose;
      } else {
        anchors[n.id - submap_node(0)] = n.pose;
      }
    }
    mapper_.apply_poses(kfs, anchors);
    sched_.end_episode();
    ++out_.stats.episodes;
    out_.timing.optimization += seconds_since(t_opt);
  }

  const Dataset& d_;
  const RunConfig& cfg_;
  PosePredictor predictor_;
  Mapper mapper_;
  PoseGraph graph_;
  OptimizationScheduler sched_;
  std::size_t wheel_i_ = 0;
  std::size_t imu_i_ = 0;
  double travel_ = 0.0;
  std::map<std::uint64_t, Chain> chains_;
  SlamResult out_;
};

}  // namespace

SlamResult run_slam(const Dataset& data, const RunConfig& cfg) {
  cfg.validate();
  return Slam(data, cfg).run();
}

void write_run(const std::filesystem::path& dir, const SlamResult& r, const RunConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_map_cloud(dir / "map_cloud.txt", r.map_cloud);
  if (!r.map_cloud.empty()) write_pnm(dir / "map.ppm", render_map_image(r.map_cloud, 10.0).image);
  write_trajectory(dir / "trajectory.txt", r.frames);
  write_trajectory(dir / "keyframes.txt", r.keyframes);
  write_trajectory(dir / "keyframes_frontend.txt", r.keyframes_frontend);
  write_graph(dir / "graph.g2o", r.graph);
  write_closures(dir / "closures.txt", r.closures);

  nlohmann::ordered_json s;
  s["format"] = "avm-run-summary v1";
  s["frames"] = r.stats.frames;
  s["dropped_frames"] = r.stats.dropped_frames;
  s["tracking_failures"] = r.stats.tracking_failures;
  s["keyframes"] = r.stats.keyframes;
  s["submaps"] = r.stats.submaps;
  s["loop_queries"] = r.stats.loop_queries;
  s["loop_candidates"] = r.stats.loop_candidates;
  s["loop_closures"] = r.closures.size();
  s["optimization_episodes"] = r.stats.episodes;
  s["local_solves"] = r.stats.local_solves;
  nlohmann::ordered_json edges;
  for (EdgeKind k : {EdgeKind::VisualAdjacent, EdgeKind::Kinematic, EdgeKind::VisualSubmap, EdgeKind::Loop}) {
    edges[to_string(k)] = r.graph.edge_count(k);
  }
  s["graph"] = {{"nodes", r.graph.nodes().size()}, {"edges", edges}};
  s["final_cost"] = r.stats.final_cost;
  s["t0"] = r.stats.t0;
  s["map_points"] = r.map_cloud.size();
  std::ofstream(dir / "run_summary.json") << s.dump(2) << "\n";

  nlohmann::ordered_json tj;
  tj["total_s"] = r.timing.total;
  tj["tracking_s"] = r.timing.tracking;
  tj["mapping_s"] = r.timing.mapping;
  tj["loop_s"] = r.timing.loop;
  tj["optimization_s"] = r.timing.optimization;
  std::ofstream(dir / "timing.json") << tj.dump(2) << "\n";

  std::ofstream(dir / "config.json") << dump_config(cfg);
}

Simulation simulate(const RunConfig& cfg) {
  cfg.validate();
  Simulation s;
  s.world = generate_world(cfg.seed, template_from_string(cfg.sim.world_template));
  TrajectorySpec traj = s.world.route;
  traj.laps = cfg.sim.laps;
  SimOptions opts = cfg.sim.options;
  opts.noise = cfg.sim.noise;
  s.data = simulate_run(s.world, traj, opts, cfg.seed);
  return s;
}

}  // namespace avm::app
