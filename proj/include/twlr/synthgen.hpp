#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "twlr/error.hpp"
#include "twlr/image.hpp"
#include "twlr/png_io.hpp"
#include "twlr/rng.hpp"

namespace twlr {

inline constexpr int kNumGrades = 5;
inline constexpr int kNumLesions = 4;

enum class Lesion : int { MA = 0, HE = 1, SE = 2, EX = 3 };
inline constexpr std::array<const char*, kNumLesions> kLesionNames = {"MA", "HE", "SE", "EX"};

struct CountRange {
  int min = 0;
  int max = 0;
};

using LesionBudget = std::array<std::array<CountRange, kNumLesions>, kNumGrades>;

/// Grade 1 carries only microaneurysms, grade 2 adds hemorrhages and hard
/// exudates, grade 3 adds soft exudates with more of everything, grade 4 is
/// the heaviest burden.
inline LesionBudget default_lesion_budget() {
  LesionBudget b{};
  //          MA       HE       SE       EX
  b[1] = {{{1, 3}, {0, 0}, {0, 0}, {0, 0}}};
  b[2] = {{{1, 2}, {1, 1}, {0, 0}, {1, 2}}};
  b[3] = {{{2, 5}, {2, 4}, {1, 2}, {2, 4}}};
  b[4] = {{{5, 8}, {4, 6}, {2, 3}, {4, 6}}};
  return b;
}

struct SynthConfig {
  int image_size = 64;
  std::uint64_t seed = 1;
  LesionBudget lesion_budget = default_lesion_budget();
  int vessel_count = 7;
  int disc_radius = 6;

  void validate(int patch_size = 16) const {
    std::vector<std::string> problems;
    if (image_size < 64) problems.push_back("image_size must be >= 64");
    if (patch_size <= 0 || image_size % patch_size != 0)
      problems.push_back("image_size must be divisible by the patch size " +
                         std::to_string(patch_size));
    for (int g = 0; g < kNumGrades; ++g)
      for (int k = 0; k < kNumLesions; ++k) {
        const auto& r = lesion_budget[g][k];
        if (r.min < 0 || r.max < r.min)
          problems.push_back("invalid lesion budget for grade " + std::to_string(g) + " " +
                             kLesionNames[k]);
      }
    for (int k = 0; k < kNumLesions; ++k)
      if (lesion_budget[0][k].max != 0) problems.push_back("grade 0 must not carry lesions");
    if (vessel_count < 0) problems.push_back("vessel_count must be >= 0");
    if (disc_radius < 1 || disc_radius * 4 > image_size)
      problems.push_back("disc_radius out of range");
    if (!problems.empty()) {
      std::string msg = "invalid SynthConfig:";
      for (auto& p : problems) msg += " " + p + ";";
      throw InvalidInput(msg);
    }
  }
};

struct FundusSample {
  int id = 0;
  Image image;
  int grade = 0;
  std::array<std::uint8_t, kNumLesions> lesion_flags{};
  std::array<BinaryMask, kNumLesions> lesion_masks;
  BinaryMask vessel_mask;
  // Geometry kept for checks; not written to disk.
  BinaryMask field_mask;
  BinaryMask disc_mask;
  std::array<int, kNumLesions> lesion_counts{};  // instances placed per type

  BinaryMask lesion_union() const {
    BinaryMask u(image.width, image.height);
    for (const auto& m : lesion_masks)
      for (std::size_t i = 0; i < u.size(); ++i) u.data[i] |= m.data[i];
    return u;
  }
};

namespace detail {

struct Rgb {
  double r, g, b;
};

struct Canvas {
  int size;
  std::vector<Rgb> px;
  explicit Canvas(int s) : size(s), px(static_cast<std::size_t>(s) * s, Rgb{0, 0, 0}) {}
  Rgb& at(int x, int y) { return px[static_cast<std::size_t>(y) * size + x]; }
  void blend(int x, int y, Rgb c, double a) {
    Rgb& p = at(x, y);
    p.r += a * (c.r - p.r);
    p.g += a * (c.g - p.g);
    p.b += a * (c.b - p.b);
  }
};

// Pixels within `r` of (cx, cy).
template <typename F>
void for_disc(int size, double cx, double cy, double r, F&& f) {
  int x0 = std::max(0, static_cast<int>(std::floor(cx - r)));
  int x1 = std::min(size - 1, static_cast<int>(std::ceil(cx + r)));
  int y0 = std::max(0, static_cast<int>(std::floor(cy - r)));
  int y1 = std::min(size - 1, static_cast<int>(std::ceil(cy + r)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double d = std::hypot(x - cx, y - cy);
      if (d <= r) f(x, y, d);
    }
}

// One lesion before it is committed: pixel set plus render alpha per pixel.
struct LesionFootprint {
  std::vector<std::pair<int, int>> pixels;  // masked (ground truth) pixels
  std::vector<std::pair<int, int>> touched;  // all pixels the rendering changes
  std::vector<double> alpha;                 // parallel to `touched`
};

inline LesionFootprint shape_lesion(Lesion type, int size, double cx, double cy, Rng& rng) {
  LesionFootprint fp;
  std::vector<double> acc(static_cast<std::size_t>(size) * size, 0.0);
  auto stamp = [&](double x, double y, double r) {
    for_disc(size, x, y, r, [&](int px, int py, double) {
      acc[static_cast<std::size_t>(py) * size + px] = 1.0;
    });
  };
  switch (type) {
    case Lesion::MA:
      stamp(cx, cy, rng.uniform(1.0, 3.0));
      break;
    case Lesion::HE: {
      int blobs = rng.uniform_int(3, 4);
      for (int i = 0; i < blobs; ++i)
        stamp(cx + rng.uniform(-1.5, 1.5), cy + rng.uniform(-1.5, 1.5), rng.uniform(1.0, 2.0));
      break;
    }
    case Lesion::EX: {
      int dots = rng.uniform_int(3, 5);
      for (int i = 0; i < dots; ++i)
        stamp(cx + rng.uniform(-2.5, 2.5), cy + rng.uniform(-2.5, 2.5), rng.uniform(0.7, 1.3));
      break;
    }
    case Lesion::SE: {
      double r = rng.uniform(2.5, 4.0);
      for_disc(size, cx, cy, r, [&](int px, int py, double d) {
        double a = 1.0 - (d / r) * (d / r);
        auto& v = acc[static_cast<std::size_t>(py) * size + px];
        v = std::max(v, a);
      });
      break;
    }
  }
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      double a = acc[static_cast<std::size_t>(y) * size + x];
      if (a <= 0.0) continue;
      fp.touched.emplace_back(x, y);
      fp.alpha.push_back(a);
      if (a >= 0.5) fp.pixels.emplace_back(x, y);
    }
  return fp;
}

inline Rgb lesion_color(Lesion type) {
  switch (type) {
    case Lesion::MA: return {95, 18, 16};
    case Lesion::HE: return {70, 10, 10};
    case Lesion::SE: return {228, 205, 172};
    case Lesion::EX: return {242, 222, 92};
  }
  return {0, 0, 0};
}

}  // namespace detail

/// Deterministic synthetic fundus image for `grade`. `index` distinguishes
/// samples of the same grade.
inline FundusSample generate_sample(const SynthConfig& config, int grade, int index = 0) {
  using namespace detail;
  if (grade < 0 || grade >= kNumGrades)
    throw InvalidInput("generate_sample: grade must be in 0..4, got " + std::to_string(grade));
  config.validate(1);

  const int S = config.image_size;
  Rng rng(derive_seed(config.seed, "synthgen.sample", grade, index));
  FundusSample s;
  s.id = index;
  s.grade = grade;

  const double c = (S - 1) / 2.0;
  const double R = S / 2.0 - 2.0;
  s.field_mask = BinaryMask(S, S);
  s.disc_mask = BinaryMask(S, S);
  s.vessel_mask = BinaryMask(S, S);
  for (auto& m : s.lesion_masks) m = BinaryMask(S, S);

  // Background: radial illumination falloff plus a few low-frequency waves.
  Canvas cv(S);
  const Rgb base{176, 84, 44};
  std::array<std::array<double, 4>, 3> waves{};
  for (auto& w : waves)
    w = {rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2), rng.uniform(0, 2 * std::numbers::pi),
         rng.uniform(3.0, 7.0)};
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      double r = std::hypot(x - c, y - c);
      if (r > R) continue;
      s.field_mask.at(x, y) = 1;
      double illum = 1.0 - 0.35 * (r / R) * (r / R);
      double tex = 0;
      for (auto& w : waves) tex += w[3] * std::sin(w[0] * x + w[1] * y + w[2]);
      tex += rng.normal(0.0, 2.0);
      cv.at(x, y) = {base.r * illum + tex, base.g * illum + 0.5 * tex, base.b * illum + 0.3 * tex};
    }

  // Optic disc to one side of center.
  const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double disc_angle = rng.uniform(-0.3, 0.3);
  const double disc_dist = 0.45 * R + rng.uniform(-1.0, 1.0);
  const double dx = c + side * disc_dist * std::cos(disc_angle);
  const double dy = c + disc_dist * std::sin(disc_angle);
  const double dr = config.disc_radius;
  for_disc(S, dx, dy, dr + 1.0, [&](int x, int y, double d) {
    double a = std::clamp(dr + 0.5 - d, 0.0, 1.0);
    cv.blend(x, y, {240, 212, 150}, a);
    if (d <= dr) s.disc_mask.at(x, y) = 1;
  });

  // Vessels: tapering random walks radiating from the disc.
  const Rgb vessel_rgb{145, 55, 36};
  for (int v = 0; v < config.vessel_count; ++v) {
    double heading = 2 * std::numbers::pi * (v + rng.uniform(0.0, 0.6)) / std::max(1, config.vessel_count);
    double bend = rng.uniform(-0.03, 0.03);
    double x = dx, y = dy;
    double radius = rng.uniform(1.2, 1.6);
    const double max_len = 0.9 * S;
    for (double len = 0; len < max_len; len += 0.6) {
      heading += bend + rng.normal(0.0, 0.05);
      x += 0.6 * std::cos(heading);
      y += 0.6 * std::sin(heading);
      if (std::hypot(x - c, y - c) > R - 1.0) break;
      // Never thinner than 3 px so a 3×3 opening keeps the vessel.
      const double r = std::max(1.05, radius * (1.0 - 0.35 * len / max_len));
      for_disc(S, x, y, r, [&](int px, int py, double) {
        if (!s.field_mask.at(px, py)) return;
        if (!s.vessel_mask.at(px, py)) cv.blend(px, py, vessel_rgb, 0.85);
        s.vessel_mask.at(px, py) = 1;
      });
    }
  }

  // Lesions: rejection-sampled placements that avoid the disc, vessels, the
  // field border and each other.
  BinaryMask occupied = s.vessel_mask;
  for_disc(S, dx, dy, dr + 3.0, [&](int x, int y, double) { occupied.at(x, y) = 1; });
  const auto& budget = config.lesion_budget[grade];
  for (int k = 0; k < kNumLesions; ++k) {
    const int count = rng.uniform_int(budget[k].min, budget[k].max);
    const auto type = static_cast<Lesion>(k);
    for (int n = 0; n < count; ++n) {
      bool placed = false;
      for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
        double rr = (R - 6.0) * std::sqrt(rng.uniform());
        double th = rng.uniform(0, 2 * std::numbers::pi);
        double lx = c + rr * std::cos(th), ly = c + rr * std::sin(th);
        LesionFootprint fp = shape_lesion(type, S, lx, ly, rng);
        bool ok = !fp.pixels.empty();
        for (auto [px, py] : fp.touched) {
          if (!ok) break;
          if (!s.field_mask.at(px, py)) ok = false;
          for (int oy = -1; oy <= 1 && ok; ++oy)
            for (int ox = -1; ox <= 1 && ok; ++ox)
              if (occupied.contains(px + ox, py + oy) && occupied.at(px + ox, py + oy)) ok = false;
        }
        if (!ok) continue;
        const Rgb col = lesion_color(type);
        for (std::size_t i = 0; i < fp.touched.size(); ++i) {
          auto [px, py] = fp.touched[i];
          cv.blend(px, py, col, type == Lesion::SE ? std::min(1.0, fp.alpha[i] * 1.2) : 1.0);
          occupied.at(px, py) = 1;
        }
        for (auto [px, py] : fp.pixels) s.lesion_masks[k].at(px, py) = 1;
        placed = true;
        ++s.lesion_counts[k];
      }
      if (!placed)
        throw InvalidInput("generate_sample: could not place lesion " +
                           std::string(kLesionNames[k]) + "; lesion budget too large for image");
    }
  }
  for (int k = 0; k < kNumLesions; ++k) s.lesion_flags[k] = s.lesion_masks[k].empty() ? 0 : 1;

  s.image = Image(S, S, 3);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const Rgb& p = cv.at(x, y);
      s.image.at(x, y, 0) = clamp_to_byte(p.r);
      s.image.at(x, y, 1) = clamp_to_byte(p.g);
      s.image.at(x, y, 2) = clamp_to_byte(p.b);
    }
  return s;
}

/// Stratified dataset: `counts[g]` samples of each grade g, grades in order.
/// Sample ids run 0..total-1 in output order.
inline std::vector<FundusSample> generate_dataset(const SynthConfig& config,
                                                  const std::array<int, kNumGrades>& counts) {
  for (int n : counts)
    if (n < 0) throw InvalidInput("generate_dataset: counts must be non-negative");
  std::vector<FundusSample> out;
  int id = 0;
  for (int g = 0; g < kNumGrades; ++g)
    for (int i = 0; i < counts[g]; ++i) {
      out.push_back(generate_sample(config, g, i));
      out.back().id = id++;
    }
  return out;
}

inline std::string sample_id_string(int id) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d", id);
  return buf;
}

/// img_{id}.png, mask_{id}_{MA|HE|SE|EX}.png, vessel_{id}.png and labels.csv.
inline void write_dataset(const std::filesystem::path& dir, const std::vector<FundusSample>& samples) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "labels.csv", std::ios::binary);
  csv << "id,grade,ma,he,se,ex\n";
  for (const auto& s : samples) {
    const std::string id = sample_id_string(s.id);
    write_png(dir / ("img_" + id + ".png"), s.image);
    for (int k = 0; k < kNumLesions; ++k)
      write_png(dir / ("mask_" + id + "_" + kLesionNames[k] + ".png"), mask_to_image(s.lesion_masks[k]));
    write_png(dir / ("vessel_" + id + ".png"), mask_to_image(s.vessel_mask));
    csv << id << ',' << s.grade;
    for (auto f : s.lesion_flags) csv << ',' << int(f);
    csv << '\n';
  }
}

/// Inverse of write_dataset. Field and disc masks are not stored and come back empty.
inline std::vector<FundusSample> read_dataset(const std::filesystem::path& dir) {
  std::ifstream csv(dir / "labels.csv");
  if (!csv) throw MissingArtifact((dir / "labels.csv").string());
  std::string line;
  std::getline(csv, line);
  std::vector<FundusSample> out;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, field;
    std::getline(ss, id, ',');
    FundusSample s;
    s.id = std::stoi(id);
    std::getline(ss, field, ',');
    s.grade = std::stoi(field);
    for (int k = 0; k < kNumLesions; ++k) {
      std::getline(ss, field, ',');
      s.lesion_flags[k] = static_cast<std::uint8_t>(std::stoi(field));
    }
    s.image = read_png(dir / ("img_" + id + ".png"), 3);
    for (int k = 0; k < kNumLesions; ++k)
      s.lesion_masks[k] = image_to_mask(read_png(dir / ("mask_" + id + "_" + kLesionNames[k] + ".png"), 1));
    s.vessel_mask = image_to_mask(read_png(dir / ("vessel_" + id + ".png"), 1));
    s.field_mask = BinaryMask(s.image.width, s.image.height);
    s.disc_mask = BinaryMask(s.image.width, s.image.height);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace twlr
