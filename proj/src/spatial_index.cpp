#include "avm/spatial_index.hpp"

#include <cmath>

#include "avm/errors.hpp"

namespace avm {

LabeledGrid::LabeledGrid(std::vector<Vec2> xy, std::vector<SemanticLabel> labels, double cell)
    : xy_(std::move(xy)), labels_(std::move(labels)), cell_(cell) {
  if (!(cell_ > 0)) throw DomainError("LabeledGrid: cell must be positive");
  if (xy_.size() != labels_.size()) throw InputError("LabeledGrid: points/labels size mismatch");
  for (std::size_t i = 0; i < xy_.size(); ++i) {
    const auto cx = static_cast<std::int64_t>(std::floor(xy_[i].x() / cell_));
    const auto cy = static_cast<std::int64_t>(std::floor(xy_[i].y() / cell_));
    buckets_[key(cx, cy, label_index(labels_[i]))].push_back(static_cast<std::uint32_t>(i));
  }
}

LabeledGrid LabeledGrid::from_points(const std::vector<LabeledPoint>& pts, double cell) {
  std::vector<Vec2> xy;
  std::vector<SemanticLabel> labels;
  xy.reserve(pts.size());
  labels.reserve(pts.size());
  for (const auto& p : pts) {
    xy.push_back(p.xy());
    labels.push_back(p.label);
  }
  return {std::move(xy), std::move(labels), cell};
}

std::uint64_t LabeledGrid::key(std::int64_t cx, std::int64_t cy, std::size_t label) {
  // 30 bits per axis is plenty for garage-scale maps at centimeter cells.
  const auto ux = static_cast<std::uint64_t>(cx + (1LL << 29)) & ((1ULL << 30) - 1);
  const auto uy = static_cast<std::uint64_t>(cy + (1LL << 29)) & ((1ULL << 30) - 1);
  return (ux << 34) | (uy << 4) | static_cast<std::uint64_t>(label);
}

void LabeledGrid::search_label(const Vec2& q, double r2, std::size_t label, std::int64_t cx, std::int64_t cy,
                               int reach, std::optional<Hit>& best) const {
  for (std::int64_t dx = -reach; dx <= reach; ++dx) {
    for (std::int64_t dy = -reach; dy <= reach; ++dy) {
      const auto it = buckets_.find(key(cx + dx, cy + dy, label));
      if (it == buckets_.end()) continue;
      for (const auto idx : it->second) {
        const double d2 = (xy_[idx] - q).squaredNorm();
        if (d2 > r2) continue;
        if (!best || d2 < best->dist2 || (d2 == best->dist2 && idx < best->index)) best = Hit{idx, d2};
      }
    }
  }
}

std::optional<LabeledGrid::Hit> LabeledGrid::nearest(const Vec2& q, double radius,
                                                     std::optional<SemanticLabel> label) const {
  std::optional<Hit> best;
  if (xy_.empty()) return best;
  const double r2 = radius * radius;
  const auto cx = static_cast<std::int64_t>(std::floor(q.x() / cell_));
  const auto cy = static_cast<std::int64_t>(std::floor(q.y() / cell_));
  const int reach = std::max(1, static_cast<int>(std::ceil(radius / cell_)));
  if (label) {
    search_label(q, r2, label_index(*label), cx, cy, reach, best);
  } else {
    for (std::size_t l = 0; l < kLabelCount; ++l) search_label(q, r2, l, cx, cy, reach, best);
  }
  return best;
}

}  // namespace avm
