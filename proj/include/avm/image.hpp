#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace avm {

/// Row-major 8-bit image with `channels` interleaved samples per pixel.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, int c = 1, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  bool empty() const { return data.empty(); }
  bool contains(int u, int v) const { return u >= 0 && v >= 0 && u < width && v < height; }

  std::uint8_t& at(int u, int v, int c = 0) {
    return data[(static_cast<std::size_t>(v) * width + u) * channels + c];
  }
  std::uint8_t at(int u, int v, int c = 0) const {
    return data[(static_cast<std::size_t>(v) * width + u) * channels + c];
  }
  void set_rgb(int u, int v, const std::array<std::uint8_t, 3>& rgb) {
    for (int c = 0; c < 3; ++c) at(u, v, c) = rgb[c];
  }
};

/// Binary PGM (1 channel) or PPM (3 channels), chosen by `img.channels`.
void write_pnm(const std::filesystem::path& path, const Image& img);
Image read_pnm(const std::filesystem::path& path);

}  // namespace avm
