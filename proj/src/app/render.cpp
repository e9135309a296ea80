#include "avm/app/render.hpp"

#include <algorithm>
#include <cmath>

#include "avm/errors.hpp"

namespace avm::app {

std::array<std::uint8_t, 3> label_color(SemanticLabel l) {
  switch (l) {
    case SemanticLabel::LaneLine: return {230, 160, 0};
    case SemanticLabel::ParkingSpot: return {0, 90, 220};
    case SemanticLabel::ZebraCrossing: return {200, 0, 160};
    case SemanticLabel::IndicatingArrow: return {0, 170, 60};
  }
  return {0, 0, 0};
}

std::array<int, 2> MapRaster::pixel(const Vec2& p) const {
  return {static_cast<int>(std::floor((p.x() - origin.x()) * px_per_meter)),
          static_cast<int>(std::floor((origin.y() - p.y()) * px_per_meter))};
}

MapRaster render_map_image(const std::vector<LabeledPoint>& cloud, double px_per_meter, double padding) {
  if (cloud.empty()) throw InputError("render_map_image: empty map");
  if (!(px_per_meter > 0)) throw InputError("render_map_image: px_per_meter must be positive");
  Vec2 lo = cloud.front().xy(), hi = lo;
  for (const auto& p : cloud) {
    lo = lo.cwiseMin(p.xy());
    hi = hi.cwiseMax(p.xy());
  }
  lo.array() -= padding;
  hi.array() += padding;

  MapRaster r;
  r.px_per_meter = px_per_meter;
  r.origin = Vec2(lo.x(), hi.y());
  const int w = std::max(1, static_cast<int>(std::ceil((hi.x() - lo.x()) * px_per_meter)));
  const int h = std::max(1, static_cast<int>(std::ceil((hi.y() - lo.y()) * px_per_meter)));
  r.image = Image(w, h, 3, 255);
  for (const auto& p : cloud) {
    auto [u, v] = r.pixel(p.xy());
    u = std::clamp(u, 0, w - 1);
    v = std::clamp(v, 0, h - 1);
    r.image.set_rgb(u, v, label_color(p.label));
  }
  return r;
}

}  // namespace avm::app
