#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "twlr/error.hpp"

namespace twlr {

/// Interleaved 8-bit image, row-major, `channels` samples per pixel.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<std::uint8_t> data;

  Image() = default;
  Image(int w, int h, int c = 3, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  std::uint8_t& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  std::uint8_t at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary H×W mask of {0,1}.
struct BinaryMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  BinaryMask() = default;
  BinaryMask(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill ? 1 : 0) {}

  std::size_t size() const { return data.size(); }
  std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
  }
  bool empty() const { return std::none_of(data.begin(), data.end(), [](auto v) { return v != 0; }); }
  bool full() const { return std::all_of(data.begin(), data.end(), [](auto v) { return v != 0; }); }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

/// Single-channel floating point map (saliency, raw vessel response).
struct FloatMap {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  FloatMap() = default;
  FloatMap(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  double& at(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }
};

inline void require_same_size(int w0, int h0, int w1, int h1, const char* what) {
  if (w0 != w1 || h0 != h1) {
    throw InvalidInput(std::string(what) + ": size mismatch (" + std::to_string(w0) + "x" +
                       std::to_string(h0) + " vs " + std::to_string(w1) + "x" +
                       std::to_string(h1) + ")");
  }
}

inline BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
  require_same_size(a.width, a.height, b.width, b.height, "mask_union");
  BinaryMask out(a.width, a.height);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = (a.data[i] | b.data[i]) ? 1 : 0;
  return out;
}

inline BinaryMask mask_intersection(const BinaryMask& a, const BinaryMask& b) {
  require_same_size(a.width, a.height, b.width, b.height, "mask_intersection");
  BinaryMask out(a.width, a.height);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = (a.data[i] & b.data[i]) ? 1 : 0;
  return out;
}

inline BinaryMask mask_complement(const BinaryMask& a) {
  BinaryMask out(a.width, a.height);
  for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] ? 0 : 1;
  return out;
}

/// True iff every 1-pixel of `inner` is also set in `outer`.
inline bool mask_subset(const BinaryMask& inner, const BinaryMask& outer) {
  require_same_size(inner.width, inner.height, outer.width, outer.height, "mask_subset");
  for (std::size_t i = 0; i < inner.size(); ++i)
    if (inner.data[i] && !outer.data[i]) return false;
  return true;
}

/// Grayscale 0/255 rendering of a binary mask.
inline Image mask_to_image(const BinaryMask& m) {
  Image out(m.width, m.height, 1);
  for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = m.data[i] ? 255 : 0;
  return out;
}

/// Any non-zero sample becomes 1. Multi-channel input uses the first channel.
inline BinaryMask image_to_mask(const Image& img) {
  BinaryMask out(img.width, img.height);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = img.data[i * img.channels] ? 1 : 0;
  return out;
}

inline std::uint8_t clamp_to_byte(double v) {
  if (!(v > 0.0)) return 0;  // also catches NaN
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(v + 0.5);
}

/// Min-max normalization to 8-bit grayscale; returns the (min, max) used.
inline std::pair<double, double> float_map_to_image(const FloatMap& map, Image& out) {
  out = Image(map.width, map.height, 1);
  if (map.data.empty()) return {0.0, 0.0};
  auto [lo, hi] = std::minmax_element(map.data.begin(), map.data.end());
  double mn = *lo, mx = *hi;
  double span = mx - mn;
  for (std::size_t i = 0; i < map.data.size(); ++i)
    out.data[i] = span > 0 ? clamp_to_byte((map.data[i] - mn) / span * 255.0) : 0;
  return {mn, mx};
}

}  // namespace twlr
