#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "avm/geometry.hpp"

namespace avm {

enum class NodeKind { Keyframe, Submap };
enum class EdgeKind { VisualAdjacent, Kinematic, VisualSubmap, Loop };

const char* to_string(NodeKind k);
const char* to_string(EdgeKind k);

using NodeId = std::uint64_t;

struct GraphNode {
  NodeId id = 0;
  NodeKind kind = NodeKind::Keyframe;
  Pose2 pose;
  bool fixed = false;
};

/// Relative-pose constraint: `measurement` ~ between(pose(from), pose(to)).
struct GraphEdge {
  NodeId from = 0;
  NodeId to = 0;
  EdgeKind kind = EdgeKind::VisualAdjacent;
  Pose2 measurement;
  Mat3 information = Mat3::Identity();
};

class PoseGraph {
 public:
  /// Throws StructuralError on duplicate ids. The first node is fixed.
  NodeId add_node(const GraphNode& node);
  NodeId add_node(NodeId id, NodeKind kind, const Pose2& pose) { return add_node(GraphNode{id, kind, pose, false}); }
  /// Throws StructuralError for dangling references, self-edges and
  /// information matrices that are not symmetric positive definite.
  /// Exact duplicates are dropped; returns the index of the stored edge.
  std::size_t add_edge(const GraphEdge& edge);

  bool has_node(NodeId id) const { return index_.count(id) != 0; }
  const GraphNode& node(NodeId id) const;
  GraphNode& node(NodeId id);
  void set_pose(NodeId id, const Pose2& p) { node(id).pose = p; }
  void set_fixed(NodeId id, bool fixed) { node(id).fixed = fixed; }

  const std::vector<GraphNode>& nodes() const { return nodes_; }
  const std::vector<GraphEdge>& edges() const { return edges_; }
  std::size_t edge_count(EdgeKind kind) const;

  std::map<NodeId, Pose2> poses() const;
  void set_poses(const std::map<NodeId, Pose2>& poses);

  /// Connected components (node ids, sorted).
  std::vector<std::vector<NodeId>> components() const;

 private:
  std::vector<GraphNode> nodes_;
  std::vector<GraphEdge> edges_;
  std::map<NodeId, std::size_t> index_;
};

/// r = log(measurement^-1 * between(from, to)), yaw wrapped.
Vec3 residual(const GraphEdge& edge, const Pose2& from, const Pose2& to);
/// Analytic d r / d(x, y, yaw) of `from` and `to`.
void residual_jacobians(const GraphEdge& edge, const Pose2& from, const Pose2& to, Mat3& j_from, Mat3& j_to);

struct OptimizerConfig {
  int max_iterations = 100;
  double initial_damping = 1e-4;
  double max_damping = 1e12;
  double gradient_tolerance = 1e-10;
  double step_tolerance = 1e-10;
  bool huber = false;
  double huber_delta = 1.0;  // on the whitened residual norm
};

struct OptimizationReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  std::string termination;
  std::vector<double> cost_history;  // accepted steps
};

/// Total weighted squared residual sum r^T I r over all edges.
double total_cost(const PoseGraph& graph);

/// Levenberg-Marquardt over all non-fixed nodes; updates every pose in place.
/// Throws DisconnectedGraphError if a component has no fixed node, and
/// NumericalError if damping exceeds the cap while the system stays
/// indefinite.
OptimizationReport optimize(PoseGraph& graph, const OptimizerConfig& cfg = {});

/// Optimization trigger policy: one episode per accepted loop closure and
/// every `submaps_per_episode` finalized submaps. Triggers arriving while an
/// episode is already pending are coalesced into it.
class OptimizationScheduler {
 public:
  explicit OptimizationScheduler(int submaps_per_episode = 2) : every_(submaps_per_episode) {}

  void on_loop_closure();
  void on_submap_finalized();
  bool pending() const { return pending_; }
  /// Starts the pending episode; returns false when nothing is pending.
  bool begin_episode();
  void end_episode() { running_ = false; }
  bool running() const { return running_; }

  std::size_t episodes_started() const { return started_; }
  std::size_t triggers() const { return triggers_; }

 private:
  void trigger();

  int every_;
  int finalized_since_ = 0;
  bool pending_ = false;
  bool running_ = false;
  std::size_t started_ = 0;
  std::size_t triggers_ = 0;
};

/// Text dump (VERTEX_SE2 / EDGE_SE2 / FIX lines with upper-triangular
/// information), plus `# NODE_KIND` / `# EDGE_KIND` annotations.
void write_graph(const std::filesystem::path& path, const PoseGraph& graph);
PoseGraph read_graph(const std::filesystem::path& path);

}  // namespace avm
