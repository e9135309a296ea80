#pragma once

#include <cstdint>
#include <optional>
#include <unordered_map>
#include <vector>

#include "avm/geometry.hpp"
#include "avm/semantic.hpp"

namespace avm {

/// Uniform 2-D grid hash over labeled points. Nearest-neighbour queries are
/// exact for any search radius <= the cell size.
class LabeledGrid {
 public:
  struct Hit {
    std::size_t index;
    double dist2;
  };

  LabeledGrid() = default;
  LabeledGrid(std::vector<Vec2> xy, std::vector<SemanticLabel> labels, double cell);
  static LabeledGrid from_points(const std::vector<LabeledPoint>& pts, double cell);

  /// Nearest point within `radius`; restricted to `label` when given.
  std::optional<Hit> nearest(const Vec2& q, double radius, std::optional<SemanticLabel> label) const;

  std::size_t size() const { return xy_.size(); }
  bool empty() const { return xy_.empty(); }
  double cell() const { return cell_; }
  const Vec2& point(std::size_t i) const { return xy_[i]; }
  SemanticLabel label(std::size_t i) const { return labels_[i]; }
  const std::vector<Vec2>& points() const { return xy_; }
  const std::vector<SemanticLabel>& labels() const { return labels_; }

 private:
  static std::uint64_t key(std::int64_t cx, std::int64_t cy, std::size_t label);
  void search_label(const Vec2& q, double r2, std::size_t label, std::int64_t cx, std::int64_t cy,
                    int reach, std::optional<Hit>& best) const;

  std::vector<Vec2> xy_;
  std::vector<SemanticLabel> labels_;
  double cell_ = 1.0;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> buckets_;
};

}  // namespace avm
