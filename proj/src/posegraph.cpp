#include "avm/posegraph.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "avm/errors.hpp"

namespace avm {

const char* to_string(NodeKind k) { return k == NodeKind::Keyframe ? "keyframe" : "submap"; }

const char* to_string(EdgeKind k) {
  switch (k) {
    case EdgeKind::VisualAdjacent: return "visual_adjacent";
    case EdgeKind::Kinematic: return "kinematic";
    case EdgeKind::VisualSubmap: return "visual_submap";
    case EdgeKind::Loop: return "loop";
  }
  return "unknown";
}

NodeId PoseGraph::add_node(const GraphNode& node) {
  if (index_.count(node.id)) throw StructuralError("add_node: duplicate node id " + std::to_string(node.id));
  GraphNode n = node;
  if (nodes_.empty()) n.fixed = true;
  index_[n.id] = nodes_.size();
  nodes_.push_back(n);
  return n.id;
}

std::size_t PoseGraph::add_edge(const GraphEdge& edge) {
  if (!has_node(edge.from) || !has_node(edge.to)) {
    throw StructuralError("add_edge: dangling node reference " + std::to_string(edge.from) + " -> " +
                          std::to_string(edge.to));
  }
  if (edge.from == edge.to) throw StructuralError("add_edge: self-edge on node " + std::to_string(edge.from));
  const Mat3& info = edge.information;
  if ((info - info.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, info.cwiseAbs().maxCoeff())) {
    throw StructuralError("add_edge: information matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(info);
  if (!(es.eigenvalues().minCoeff() > 0)) throw StructuralError("add_edge: information matrix is not positive definite");
  for (std::size_t i = 0; i < edges_.size(); ++i) {
    const auto& e = edges_[i];
    if (e.from == edge.from && e.to == edge.to && e.kind == edge.kind && e.measurement == edge.measurement) return i;
  }
  edges_.push_back(edge);
  return edges_.size() - 1;
}

const GraphNode& PoseGraph::node(NodeId id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw LookupError("unknown graph node " + std::to_string(id));
  return nodes_[it->second];
}

GraphNode& PoseGraph::node(NodeId id) {
  const auto it = index_.find(id);
  if (it == index_.end()) throw LookupError("unknown graph node " + std::to_string(id));
  return nodes_[it->second];
}

std::size_t PoseGraph::edge_count(EdgeKind kind) const {
  return static_cast<std::size_t>(std::count_if(edges_.begin(), edges_.end(), [kind](const auto& e) { return e.kind == kind; }));
}

std::map<NodeId, Pose2> PoseGraph::poses() const {
  std::map<NodeId, Pose2> out;
  for (const auto& n : nodes_) out[n.id] = n.pose;
  return out;
}

void PoseGraph::set_poses(const std::map<NodeId, Pose2>& poses) {
  for (const auto& [id, p] : poses) node(id).pose = p;
}

std::vector<std::vector<NodeId>> PoseGraph::components() const {
  std::vector<std::size_t> parent(nodes_.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& e : edges_) {
    const auto a = find(index_.at(e.from)), b = find(index_.at(e.to));
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::map<std::size_t, std::vector<NodeId>> groups;
  for (std::size_t i = 0; i < nodes_.size(); ++i) groups[find(i)].push_back(nodes_[i].id);
  std::vector<std::vector<NodeId>> out;
  for (auto& [root, ids] : groups) {
    std::sort(ids.begin(), ids.end());
    out.push_back(std::move(ids));
  }
  return out;
}

// --------------------------------------------------------------- residual

namespace {

// log(E) = (Vinv(theta) t, theta), Vinv = [[a, b], [-b, a]],
// a = (theta/2) cot(theta/2), b = theta/2.
void vinv_coeffs(double th, double& a, double& da) {
  if (std::abs(th) < 1e-4) {
    a = 1.0 - th * th / 12.0;
    da = -th / 6.0;
    return;
  }
  const double h = 0.5 * th, s = std::sin(h), c = std::cos(h);
  a = h * c / s;
  da = 0.5 * c / s - 0.25 * th / (s * s);
}

}  // namespace

Vec3 residual(const GraphEdge& edge, const Pose2& from, const Pose2& to) {
  return log_se2(compose(inverse(edge.measurement), between(from, to)));
}

void residual_jacobians(const GraphEdge& edge, const Pose2& from, const Pose2& to, Mat3& j_from, Mat3& j_to) {
  const Pose2 delta = between(from, to);
  const Pose2 err = compose(inverse(edge.measurement), delta);

  double a, da;
  vinv_coeffs(err.yaw, a, da);
  Mat3 dlog = Mat3::Zero();
  dlog(0, 0) = a;
  dlog(0, 1) = 0.5 * err.yaw;
  dlog(1, 0) = -0.5 * err.yaw;
  dlog(1, 1) = a;
  dlog(0, 2) = da * err.x + 0.5 * err.y;
  dlog(1, 2) = -0.5 * err.x + da * err.y;
  dlog(2, 2) = 1.0;

  Mat3 dmeas = Mat3::Identity();  // d err / d delta
  dmeas.topLeftCorner<2, 2>() = edge.measurement.rotation().transpose();

  const double c = std::cos(from.yaw), s = std::sin(from.yaw);
  const double dx = to.x - from.x, dy = to.y - from.y;
  Mat3 d_from = Mat3::Zero();  // d delta / d from
  d_from(0, 0) = -c;
  d_from(0, 1) = -s;
  d_from(1, 0) = s;
  d_from(1, 1) = -c;
  d_from(0, 2) = -s * dx + c * dy;
  d_from(1, 2) = -c * dx - s * dy;
  d_from(2, 2) = -1.0;
  Mat3 d_to = Mat3::Zero();
  d_to(0, 0) = c;
  d_to(0, 1) = s;
  d_to(1, 0) = -s;
  d_to(1, 1) = c;
  d_to(2, 2) = 1.0;

  const Mat3 pre = dlog * dmeas;
  j_from = pre * d_from;
  j_to = pre * d_to;
}

namespace {

double robust_weight(const Vec3& r, const Mat3& info, const OptimizerConfig& cfg) {
  if (!cfg.huber) return 1.0;
  const double e = std::sqrt(std::max(0.0, r.dot(info * r)));
  return e <= cfg.huber_delta ? 1.0 : cfg.huber_delta / e;
}

double edge_cost(const Vec3& r, const Mat3& info, const OptimizerConfig& cfg) {
  const double e2 = r.dot(info * r);
  if (!cfg.huber) return e2;
  const double e = std::sqrt(std::max(0.0, e2));
  return e <= cfg.huber_delta ? e2 : 2.0 * cfg.huber_delta * e - cfg.huber_delta * cfg.huber_delta;
}

double cost_of(const PoseGraph& g, const std::vector<Pose2>& poses, const std::map<NodeId, std::size_t>& slot,
               const OptimizerConfig& cfg) {
  double total = 0.0;
  for (const auto& e : g.edges()) {
    total += edge_cost(residual(e, poses[slot.at(e.from)], poses[slot.at(e.to)]), e.information, cfg);
  }
  return total;
}

}  // namespace

double total_cost(const PoseGraph& graph) {
  std::map<NodeId, std::size_t> slot;
  std::vector<Pose2> poses;
  for (const auto& n : graph.nodes()) {
    slot[n.id] = poses.size();
    poses.push_back(n.pose);
  }
  return cost_of(graph, poses, slot, OptimizerConfig{});
}

OptimizationReport optimize(PoseGraph& graph, const OptimizerConfig& cfg) {
  // Gauge check: every component needs a fixed node.
  std::vector<NodeId> orphans;
  for (const auto& comp : graph.components()) {
    const bool anchored = std::any_of(comp.begin(), comp.end(), [&](NodeId id) { return graph.node(id).fixed; });
    if (!anchored) orphans.insert(orphans.end(), comp.begin(), comp.end());
  }
  if (!orphans.empty()) {
    std::string list;
    for (auto id : orphans) list += (list.empty() ? "" : ",") + std::to_string(id);
    throw DisconnectedGraphError("optimize: component(s) without a fixed node: " + list);
  }

  std::map<NodeId, std::size_t> slot;
  std::vector<Pose2> poses;
  std::vector<int> var(graph.nodes().size(), -1);
  int nfree = 0;
  for (const auto& n : graph.nodes()) {
    var[poses.size()] = n.fixed ? -1 : nfree++;
    slot[n.id] = poses.size();
    poses.push_back(n.pose);
  }

  OptimizationReport rep;
  double cost = cost_of(graph, poses, slot, cfg);
  rep.initial_cost = rep.final_cost = cost;
  rep.cost_history.push_back(cost);
  if (nfree == 0 || graph.edges().empty()) {
    rep.termination = "nothing_to_optimize";
    return rep;
  }

  const int dim = 3 * nfree;
  double lambda = cfg.initial_damping;
  rep.termination = "max_iterations";
  for (int it = 0; it < cfg.max_iterations; ++it) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(graph.edges().size() * 36);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
    for (const auto& e : graph.edges()) {
      const std::size_t si = slot.at(e.from), sj = slot.at(e.to);
      const Vec3 r = residual(e, poses[si], poses[sj]);
      Mat3 ji, jj;
      residual_jacobians(e, poses[si], poses[sj], ji, jj);
      const Mat3 w = robust_weight(r, e.information, cfg) * e.information;
      const int vi = var[si], vj = var[sj];
      const Mat3* js[2] = {&ji, &jj};
      const int vs[2] = {vi, vj};
      for (int a = 0; a < 2; ++a) {
        if (vs[a] < 0) continue;
        b.segment<3>(3 * vs[a]) += js[a]->transpose() * w * r;
        for (int c = 0; c < 2; ++c) {
          if (vs[c] < 0) continue;
          const Mat3 blk = js[a]->transpose() * w * *js[c];
          for (int p = 0; p < 3; ++p)
            for (int q = 0; q < 3; ++q) trip.emplace_back(3 * vs[a] + p, 3 * vs[c] + q, blk(p, q));
        }
      }
    }
    if (b.lpNorm<Eigen::Infinity>() < cfg.gradient_tolerance) {
      rep.termination = "gradient_tolerance";
      break;
    }
    Eigen::SparseMatrix<double> h(dim, dim);
    h.setFromTriplets(trip.begin(), trip.end());
    const Eigen::VectorXd diag = h.diagonal();

    bool accepted = false;
    bool tiny_step = false;
    while (!accepted) {
      Eigen::SparseMatrix<double> damped = h;
      for (int k = 0; k < dim; ++k) damped.coeffRef(k, k) += lambda * std::max(diag(k), 1e-9);
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(damped);
      bool ok = solver.info() == Eigen::Success && (solver.vectorD().array() > 0).all();
      Eigen::VectorXd dx;
      if (ok) {
        dx = solver.solve(-b);
        ok = solver.info() == Eigen::Success && dx.allFinite();
      }
      if (!ok) {
        lambda *= 10.0;
        if (lambda > cfg.max_damping) throw NumericalError("optimize: normal matrix stays indefinite at damping cap");
        continue;
      }
      std::vector<Pose2> trial = poses;
      for (std::size_t s = 0; s < poses.size(); ++s) {
        if (var[s] < 0) continue;
        const auto d = dx.segment<3>(3 * var[s]);
        trial[s] = Pose2(poses[s].x + d(0), poses[s].y + d(1), poses[s].yaw + d(2));
      }
      const double trial_cost = cost_of(graph, trial, slot, cfg);
      if (trial_cost <= cost) {
        poses = std::move(trial);
        tiny_step = dx.lpNorm<Eigen::Infinity>() < cfg.step_tolerance;
        cost = trial_cost;
        rep.cost_history.push_back(cost);
        lambda = std::max(lambda / 10.0, 1e-15);
        accepted = true;
      } else {
        lambda *= 10.0;
        if (lambda > cfg.max_damping) break;
      }
    }
    rep.iterations = it + 1;
    if (!accepted) {
      rep.termination = "no_improvement";
      break;
    }
    if (tiny_step) {
      rep.termination = "step_tolerance";
      break;
    }
  }
  rep.final_cost = cost;
  for (const auto& n : graph.nodes()) graph.node(n.id).pose = poses[slot.at(n.id)];
  return rep;
}

// -------------------------------------------------------------- scheduler

void OptimizationScheduler::trigger() {
  ++triggers_;
  pending_ = true;
}

void OptimizationScheduler::on_loop_closure() { trigger(); }

void OptimizationScheduler::on_submap_finalized() {
  if (++finalized_since_ >= every_) {
    finalized_since_ = 0;
    trigger();
  }
}

bool OptimizationScheduler::begin_episode() {
  if (!pending_) return false;
  pending_ = false;
  running_ = true;
  ++started_;
  return true;
}

// ------------------------------------------------------------------- dump

void write_graph(const std::filesystem::path& path, const PoseGraph& graph) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "# avm-graph v1\n" << std::setprecision(17);
  for (const auto& n : graph.nodes()) {
    out << "VERTEX_SE2 " << n.id << " " << n.pose.x << " " << n.pose.y << " " << n.pose.yaw << "\n";
    out << "# NODE_KIND " << n.id << " " << to_string(n.kind) << "\n";
  }
  for (const auto& n : graph.nodes()) {
    if (n.fixed) out << "FIX " << n.id << "\n";
  }
  for (const auto& e : graph.edges()) {
    const Mat3& i = e.information;
    out << "EDGE_SE2 " << e.from << " " << e.to << " " << e.measurement.x << " " << e.measurement.y << " "
        << e.measurement.yaw << " " << i(0, 0) << " " << i(0, 1) << " " << i(0, 2) << " " << i(1, 1) << " "
        << i(1, 2) << " " << i(2, 2) << "\n";
    out << "# EDGE_KIND " << to_string(e.kind) << "\n";
  }
}

PoseGraph read_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  struct V {
    NodeId id;
    Pose2 p;
    NodeKind kind = NodeKind::Keyframe;
    bool fixed = false;
  };
  std::vector<V> verts;
  std::map<NodeId, std::size_t> vidx;
  std::vector<GraphEdge> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    if (tag == "VERTEX_SE2") {
      V v{};
      double x, y, th;
      if (!(ss >> v.id >> x >> y >> th)) throw SchemaError(path.string(), lineno, "bad VERTEX_SE2");
      v.p = Pose2(x, y, th);
      vidx[v.id] = verts.size();
      verts.push_back(v);
    } else if (tag == "FIX") {
      NodeId id;
      if (!(ss >> id) || !vidx.count(id)) throw SchemaError(path.string(), lineno, "bad FIX");
      verts[vidx[id]].fixed = true;
    } else if (tag == "EDGE_SE2") {
      GraphEdge e;
      double x, y, th, a, b, c, d, f, g;
      if (!(ss >> e.from >> e.to >> x >> y >> th >> a >> b >> c >> d >> f >> g)) {
        throw SchemaError(path.string(), lineno, "bad EDGE_SE2");
      }
      e.measurement = Pose2(x, y, th);
      e.information << a, b, c, b, d, f, c, f, g;
      edges.push_back(e);
    } else if (tag == "#") {
      std::string what;
      ss >> what;
      if (what == "NODE_KIND") {
        NodeId id;
        std::string k;
        if (ss >> id >> k && vidx.count(id)) verts[vidx[id]].kind = k == "submap" ? NodeKind::Submap : NodeKind::Keyframe;
      } else if (what == "EDGE_KIND" && !edges.empty()) {
        std::string k;
        ss >> k;
        if (k == "kinematic") edges.back().kind = EdgeKind::Kinematic;
        else if (k == "visual_submap") edges.back().kind = EdgeKind::VisualSubmap;
        else if (k == "loop") edges.back().kind = EdgeKind::Loop;
        else edges.back().kind = EdgeKind::VisualAdjacent;
      }
    } else {
      throw SchemaError(path.string(), lineno, "unknown record '" + tag + "'");
    }
  }
  PoseGraph g;
  for (const auto& v : verts) g.add_node(GraphNode{v.id, v.kind, v.p, v.fixed});
  for (const auto& v : verts) g.set_fixed(v.id, v.fixed);
  for (const auto& e : edges) g.add_edge(e);
  return g;
}

}  // namespace avm
