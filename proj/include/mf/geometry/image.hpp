#pragma once

#include <cstdint>
#include <vector>

namespace mf::geom {

struct Rgb {
  float r = 0, g = 0, b = 0;
  constexpr bool operator==(const Rgb&) const = default;
};

// Row-major H x W x 3, values in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, Rgb fill = {}) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3) {
    for (std::size_t i = 0; i < data.size(); i += 3) {
      data[i] = fill.r;
      data[i + 1] = fill.g;
      data[i + 2] = fill.b;
    }
  }

  std::size_t index(int x, int y) const { return (static_cast<std::size_t>(y) * width + x) * 3; }
  Rgb at(int x, int y) const {
    const auto i = index(x, y);
    return {data[i], data[i + 1], data[i + 2]};
  }
  void set(int x, int y, Rgb c) {
    const auto i = index(x, y);
    data[i] = c.r;
    data[i + 1] = c.g;
    data[i + 2] = c.b;
  }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }
  bool operator==(const Image&) const = default;
};

// Metric depth along the optical axis; 0 or non-finite marks an invalid pixel.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> depth;

  DepthMap() = default;
  DepthMap(int w, int h, float fill = 0) : width(w), height(h), depth(static_cast<std::size_t>(w) * h, fill) {}
  float at(int x, int y) const { return depth[static_cast<std::size_t>(y) * width + x]; }
  void set(int x, int y, float z) { depth[static_cast<std::size_t>(y) * width + x] = z; }
};

// Row-major H x W boolean map.
struct Mask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int w, int h, bool fill = false) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, fill ? 1 : 0) {}
  bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
  void set(int x, int y, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b != 0;
    return n;
  }
  bool operator==(const Mask&) const = default;
};

}  // namespace mf::geom
