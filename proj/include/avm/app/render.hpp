#pragma once

#include <array>
#include <vector>

#include "avm/image.hpp"
#include "avm/semantic.hpp"

namespace avm::app {

/// RGB color of each label on the map image.
std::array<std::uint8_t, 3> label_color(SemanticLabel l);

struct MapRaster {
  Image image;  // RGB, white background
  double px_per_meter = 10.0;
  Vec2 origin;  // world coordinates of the top-left image corner
  /// Pixel holding world point p (u right = +x, v down = -y).
  std::array<int, 2> pixel(const Vec2& p) const;
};

/// One pixel per point over the cloud bounds padded by `padding` metres.
/// Later points overwrite earlier ones. Throws InputError for an empty
/// cloud or non-positive scale.
MapRaster render_map_image(const std::vector<LabeledPoint>& cloud, double px_per_meter, double padding = 1.0);

}  // namespace avm::app
