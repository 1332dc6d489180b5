#pragma once

#include <array>
#include <utility>
#include <vector>

#include "twlr/image.hpp"

namespace twlr {

enum class StructuringElement { Cross3, Square3 };

namespace detail {
inline std::vector<std::pair<int, int>> element_offsets(StructuringElement se) {
  if (se == StructuringElement::Cross3) return {{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}};
  std::vector<std::pair<int, int>> out;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) out.emplace_back(dx, dy);
  return out;
}
}  // namespace detail

/// Pixels outside the image count as background for both operations.
inline BinaryMask dilate(const BinaryMask& m, StructuringElement se = StructuringElement::Cross3) {
  const auto offs = detail::element_offsets(se);
  BinaryMask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      for (auto [dx, dy] : offs)
        if (m.contains(x + dx, y + dy) && m.at(x + dx, y + dy)) {
          out.at(x, y) = 1;
          break;
        }
  return out;
}

// Pixels outside the image count as foreground, so erosion does not eat the border.
inline BinaryMask erode(const BinaryMask& m, StructuringElement se = StructuringElement::Cross3) {
  const auto offs = detail::element_offsets(se);
  BinaryMask out(m.width, m.height);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      bool all = true;
      for (auto [dx, dy] : offs)
        if (m.contains(x + dx, y + dy) && !m.at(x + dx, y + dy)) {
          all = false;
          break;
        }
      out.at(x, y) = all ? 1 : 0;
    }
  return out;
}

inline BinaryMask opening(const BinaryMask& m, StructuringElement se = StructuringElement::Cross3) {
  return dilate(erode(m, se), se);
}

inline BinaryMask closing(const BinaryMask& m, StructuringElement se = StructuringElement::Cross3) {
  return erode(dilate(m, se), se);
}

struct Component {
  std::vector<std::pair<int, int>> pixels;
  int min_x, min_y, max_x, max_y;
  int extent() const { return std::max(max_x - min_x, max_y - min_y) + 1; }
};

/// 8-connected components in row-major discovery order.
inline std::vector<Component> connected_components(const BinaryMask& m) {
  std::vector<Component> comps;
  std::vector<std::uint8_t> seen(m.size(), 0);
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * m.width + x;
      if (!m.data[i] || seen[i]) continue;
      Component c{{}, x, y, x, y};
      seen[i] = 1;
      stack.push_back({x, y});
      while (!stack.empty()) {
        auto [cx, cy] = stack.back();
        stack.pop_back();
        c.pixels.push_back({cx, cy});
        c.min_x = std::min(c.min_x, cx);
        c.max_x = std::max(c.max_x, cx);
        c.min_y = std::min(c.min_y, cy);
        c.max_y = std::max(c.max_y, cy);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int nx = cx + dx, ny = cy + dy;
            if (!m.contains(nx, ny)) continue;
            const std::size_t j = static_cast<std::size_t>(ny) * m.width + nx;
            if (m.data[j] && !seen[j]) {
              seen[j] = 1;
              stack.push_back({nx, ny});
            }
          }
      }
      comps.push_back(std::move(c));
    }
  return comps;
}

}  // namespace twlr
