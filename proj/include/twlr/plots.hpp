#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "twlr/image.hpp"

namespace twlr::plot {

using Color = std::array<std::uint8_t, 3>;

inline constexpr Color kWhite{255, 255, 255};
inline constexpr Color kBlack{0, 0, 0};
inline constexpr Color kGrid{215, 215, 215};
inline constexpr Color kInk{40, 40, 40};
inline constexpr Color kAccent{200, 60, 40};
inline constexpr Color kContour{60, 230, 80};

inline Image canvas(int w, int h, Color bg = kWhite) {
  Image img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = bg[c];
  return img;
}

inline void put(Image& img, int x, int y, Color col) {
  if (!img.contains(x, y)) return;
  for (int c = 0; c < 3; ++c) img.at(x, y, c) = col[c];
}

inline void fill_rect(Image& img, int x0, int y0, int x1, int y1, Color col) {
  for (int y = std::max(0, y0); y < std::min(img.height, y1); ++y)
    for (int x = std::max(0, x0); x < std::min(img.width, x1); ++x) put(img, x, y, col);
}

inline void line(Image& img, int x0, int y0, int x1, int y1, Color col, int thickness = 1) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  const int r = thickness / 2;
  while (true) {
    fill_rect(img, x0 - r, y0 - r, x0 - r + thickness, y0 - r + thickness, col);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

// 3×5 glyphs, one row per 3-bit group, top row first.
inline const std::array<std::uint16_t, 5>* glyph(char ch) {
  static const std::array<std::array<std::uint16_t, 5>, 13> digits = {{
      {7, 5, 5, 5, 7},  // 0
      {2, 6, 2, 2, 7},  // 1
      {7, 1, 7, 4, 7},  // 2
      {7, 1, 7, 1, 7},  // 3
      {5, 5, 7, 1, 1},  // 4
      {7, 4, 7, 1, 7},  // 5
      {7, 4, 7, 5, 7},  // 6
      {7, 1, 1, 1, 1},  // 7
      {7, 5, 7, 5, 7},  // 8
      {7, 5, 7, 1, 7},  // 9
      {0, 0, 0, 0, 2},  // .
      {5, 1, 2, 4, 5},  // %
      {0, 0, 7, 0, 0},  // -
  }};
  if (ch >= '0' && ch <= '9') return &digits[ch - '0'];
  if (ch == '.') return &digits[10];
  if (ch == '%') return &digits[11];
  if (ch == '-') return &digits[12];
  return nullptr;
}

/// Digits and `.%-` only; anything else advances as a space.
inline void text(Image& img, int x, int y, const std::string& s, Color col, int scale = 2) {
  for (char ch : s) {
    if (const auto* g = glyph(ch))
      for (int row = 0; row < 5; ++row)
        for (int bit = 0; bit < 3; ++bit)
          if ((*g)[row] & (4 >> bit)) fill_rect(img, x + bit * scale, y + row * scale, x + (bit + 1) * scale, y + (row + 1) * scale, col);
    x += 4 * scale;
  }
}

inline int text_width(const std::string& s, int scale = 2) { return static_cast<int>(s.size()) * 4 * scale - scale; }

/// Line chart of values in [0,1] against 1-based x positions; y ticks in percent.
inline Image line_chart(const std::vector<double>& values, int width = 480, int height = 320) {
  Image img = canvas(width, height);
  const int left = 48, right = width - 16, top = 16, bottom = height - 36;
  for (int pct = 0; pct <= 100; pct += 25) {
    const int y = bottom - (bottom - top) * pct / 100;
    line(img, left, y, right, y, kGrid);
    const std::string label = std::to_string(pct);
    text(img, left - 8 - text_width(label), y - 5, label, kInk);
  }
  line(img, left, top, left, bottom, kInk);
  line(img, left, bottom, right, bottom, kInk);
  if (values.empty()) return img;
  const int n = static_cast<int>(values.size());
  auto px = [&](int i) { return n == 1 ? (left + right) / 2 : left + 12 + (right - left - 24) * i / (n - 1); };
  auto py = [&](double v) { return bottom - static_cast<int>(std::lround((bottom - top) * std::clamp(v, 0.0, 1.0))); };
  for (int i = 0; i < n; ++i) {
    const std::string label = std::to_string(i + 1);
    text(img, px(i) - text_width(label) / 2, bottom + 10, label, kInk);
    if (i > 0) line(img, px(i - 1), py(values[i - 1]), px(i), py(values[i]), kAccent, 2);
  }
  for (int i = 0; i < n; ++i) fill_rect(img, px(i) - 3, py(values[i]) - 3, px(i) + 4, py(values[i]) + 4, kAccent);
  return img;
}

/// Square count matrix as a heat map (rows top to bottom, columns left to
/// right), each cell labelled with its count.
template <std::size_t K>
Image heat_map(const std::array<std::array<std::int64_t, K>, K>& m, int cell = 56) {
  const int pad = 28;
  const int size = pad + static_cast<int>(K) * cell + 8;
  Image img = canvas(size, size);
  std::int64_t peak = 1;
  for (const auto& row : m)
    for (auto v : row) peak = std::max(peak, v);
  for (std::size_t i = 0; i < K; ++i) {
    const std::string idx = std::to_string(i);
    text(img, pad + static_cast<int>(i) * cell + cell / 2 - text_width(idx) / 2, 8, idx, kInk);
    text(img, 8, pad + static_cast<int>(i) * cell + cell / 2 - 5, idx, kInk);
    for (std::size_t j = 0; j < K; ++j) {
      const double t = static_cast<double>(m[i][j]) / static_cast<double>(peak);
      const Color col{static_cast<std::uint8_t>(255 - 200 * t), static_cast<std::uint8_t>(255 - 140 * t),
                      static_cast<std::uint8_t>(255 - 60 * t)};
      const int x0 = pad + static_cast<int>(j) * cell, y0 = pad + static_cast<int>(i) * cell;
      fill_rect(img, x0, y0, x0 + cell - 1, y0 + cell - 1, col);
      const std::string label = std::to_string(m[i][j]);
      text(img, x0 + cell / 2 - text_width(label) / 2, y0 + cell / 2 - 5, label, t > 0.6 ? kWhite : kInk);
    }
  }
  return img;
}

/// Nearest-neighbour upscale; grayscale input becomes RGB.
inline Image upscale(const Image& src, int factor) {
  Image out(src.width * factor, src.height * factor, 3);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = src.at(x / factor, y / factor, src.channels == 3 ? c : 0);
  return out;
}

/// RGB copy of `img` with the 4-connected boundary of `mask` drawn over it.
inline Image contour_overlay(const Image& img, const BinaryMask& mask, Color col = kContour) {
  Image out = img.channels == 3 ? img : upscale(img, 1);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      bool edge = false;
      for (auto [dx, dy] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= mask.width || ny >= mask.height || !mask.at(nx, ny)) edge = true;
      }
      if (edge) put(out, x, y, col);
    }
  return out;
}

/// Tiles equally sized RGB images into a grid, `columns` per row, with a gap.
inline Image grid(const std::vector<Image>& tiles, int columns, int gap = 4) {
  if (tiles.empty()) return canvas(1, 1);
  const int tw = tiles[0].width, th = tiles[0].height;
  const int rows = (static_cast<int>(tiles.size()) + columns - 1) / columns;
  Image out = canvas(columns * tw + (columns + 1) * gap, rows * th + (rows + 1) * gap);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    const int ox = gap + static_cast<int>(i % columns) * (tw + gap);
    const int oy = gap + static_cast<int>(i / columns) * (th + gap);
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x)
        for (int c = 0; c < 3; ++c) out.at(ox + x, oy + y, c) = tiles[i].at(x, y, c);
  }
  return out;
}

}  // namespace twlr::plot
