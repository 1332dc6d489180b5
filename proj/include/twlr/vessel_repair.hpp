#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "twlr/error.hpp"
#include "twlr/image.hpp"
#include "twlr/morphology.hpp"
#include "twlr/png_io.hpp"
#include "twlr/rng.hpp"
#include "twlr/synthgen.hpp"

namespace twlr {

inline constexpr int kVesselThreshold = 20;
inline constexpr int kMinVesselLength = 20;

struct VesselColorStats {
  std::array<double, 3> mean{};
  std::array<double, 3> stddev{};
};

struct ColorParams {
  double beta_dark = 0.7;
  double gamma_distance = 0.5;
  double delta_noise = 0.1;
  double alpha_vessel = 0.35;
  double alpha_inter = 0.8;

  void validate() const {
    std::string bad;
    if (!(beta_dark > 0.0 && beta_dark <= 1.0)) bad += " beta_dark in (0,1];";
    if (!(gamma_distance >= 0.0 && gamma_distance <= 1.0)) bad += " gamma_distance in [0,1];";
    if (!(delta_noise >= 0.0)) bad += " delta_noise >= 0;";
    if (!(alpha_vessel >= 0.0 && alpha_vessel <= 1.0)) bad += " alpha_vessel in [0,1];";
    if (!(alpha_inter >= 0.0 && alpha_inter <= 1.0)) bad += " alpha_inter in [0,1];";
    if (!(alpha_inter >= alpha_vessel)) bad += " alpha_inter >= alpha_vessel;";
    if (!bad.empty()) throw InvalidInput("ColorParams violated:" + bad);
  }
};

/// Floating-point RGB field, values in [0,255].
struct ColorField {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // 3 per pixel, row-major

  ColorField() = default;
  ColorField(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, 0.0) {}
  double& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

/// raw > 20, then opening and closing with a 3×3 cross, then drop 8-connected
/// components whose larger bounding-box side is under 20 px.
inline BinaryMask preprocess_vessel_mask(const Image& raw) {
  if (raw.channels != 1) throw InvalidInput("preprocess_vessel_mask: expected a grayscale map");
  BinaryMask bin(raw.width, raw.height);
  for (std::size_t i = 0; i < bin.size(); ++i) bin.data[i] = raw.data[i] > kVesselThreshold ? 1 : 0;
  BinaryMask cleaned = closing(opening(bin));
  BinaryMask out(raw.width, raw.height);
  for (const auto& comp : connected_components(cleaned))
    if (comp.extent() >= kMinVesselLength)
      for (auto [x, y] : comp.pixels) out.at(x, y) = 1;
  return out;
}

inline BinaryMask intersect(const BinaryMask& lesion_mask, const BinaryMask& vessel_mask) {
  return mask_intersection(lesion_mask, vessel_mask);
}

/// Per-channel mean and population standard deviation over the masked pixels.
inline VesselColorStats extract_vessel_color_stats(const Image& original, const BinaryMask& vessel_mask) {
  require_same_size(original.width, original.height, vessel_mask.width, vessel_mask.height,
                    "extract_vessel_color_stats");
  if (original.channels != 3) throw InvalidInput("extract_vessel_color_stats: expected RGB image");
  VesselColorStats st;
  std::size_t n = 0;
  for (std::size_t i = 0; i < vessel_mask.size(); ++i) {
    if (!vessel_mask.data[i]) continue;
    ++n;
    for (int c = 0; c < 3; ++c) st.mean[c] += original.data[i * 3 + c];
  }
  if (n == 0) throw InvalidInput("extract_vessel_color_stats: vessel mask is empty");
  for (int c = 0; c < 3; ++c) st.mean[c] /= static_cast<double>(n);
  for (std::size_t i = 0; i < vessel_mask.size(); ++i) {
    if (!vessel_mask.data[i]) continue;
    for (int c = 0; c < 3; ++c) {
      const double d = original.data[i * 3 + c] - st.mean[c];
      st.stddev[c] += d * d;
    }
  }
  for (int c = 0; c < 3; ++c) st.stddev[c] = std::sqrt(st.stddev[c] / static_cast<double>(n));
  return st;
}

/// Colored vessel layer: a darkened base color, scaled per pixel by
/// 1 − γ·d/r_max (d = distance to the vessel centroid) after adding
/// σ_c-scaled Gaussian noise. Noise is drawn per vessel pixel in row-major
/// order, three draws per pixel; with δ_noise = 0 no draws are made.
inline ColorField generate_colored_vessels(const BinaryMask& vessel_mask, const VesselColorStats& stats,
                                           const ColorParams& params, std::uint64_t seed) {
  params.validate();
  std::vector<std::pair<int, int>> coords;
  double cx = 0, cy = 0;
  for (int y = 0; y < vessel_mask.height; ++y)
    for (int x = 0; x < vessel_mask.width; ++x)
      if (vessel_mask.at(x, y)) {
        coords.emplace_back(x, y);
        cx += x;
        cy += y;
      }
  if (coords.empty()) throw InvalidInput("generate_colored_vessels: vessel mask is empty");
  cx /= static_cast<double>(coords.size());
  cy /= static_cast<double>(coords.size());

  double r_max = 0;
  for (auto [x, y] : coords) r_max = std::max(r_max, std::hypot(x - cx, y - cy));

  std::array<double, 3> base{};
  for (int c = 0; c < 3; ++c) base[c] = params.beta_dark * stats.mean[c];

  ColorField out(vessel_mask.width, vessel_mask.height);
  Rng rng(derive_seed(seed, "vessel.color"));
  for (auto [x, y] : coords) {
    const double d = std::hypot(x - cx, y - cy);
    const double alpha = r_max > 0 ? 1.0 - params.gamma_distance * d / r_max : 1.0;
    for (int c = 0; c < 3; ++c) {
      const double eps = params.delta_noise > 0 ? params.delta_noise * rng.normal() : 0.0;
      const double noisy = base[c] + stats.stddev[c] * eps;
      out.at(x, y, c) = std::clamp(alpha * noisy, 0.0, 255.0);
    }
  }
  return out;
}

/// Intersection pixels get α_inter, remaining vessel pixels α_vessel, all
/// other pixels are copied unchanged.
inline Image blend_vessels(const Image& inpainted, const ColorField& colored, const BinaryMask& vessel_mask,
                           const BinaryMask& intersection_mask, const ColorParams& params) {
  require_same_size(inpainted.width, inpainted.height, colored.width, colored.height, "blend_vessels");
  require_same_size(inpainted.width, inpainted.height, vessel_mask.width, vessel_mask.height, "blend_vessels");
  require_same_size(inpainted.width, inpainted.height, intersection_mask.width, intersection_mask.height,
                    "blend_vessels");
  if (inpainted.channels != 3) throw InvalidInput("blend_vessels: expected RGB image");
  Image out = inpainted;
  for (std::size_t i = 0; i < vessel_mask.size(); ++i) {
    double a;
    if (intersection_mask.data[i]) a = params.alpha_inter;
    else if (vessel_mask.data[i]) a = params.alpha_vessel;
    else continue;
    for (int c = 0; c < 3; ++c)
      out.data[i * 3 + c] = clamp_to_byte((1.0 - a) * inpainted.data[i * 3 + c] + a * colored.data[i * 3 + c]);
  }
  return out;
}

struct RepairResult {
  Image image;
  bool skipped = false;  // preprocessed vessel mask was empty
  BinaryMask vessels;    // preprocessed vessel mask
  BinaryMask intersection;
};

/// Full vessel repair of one inpainted image. Color statistics always come
/// from `original_image`.
inline RepairResult repair(const Image& inpainted_image, const Image& original_image, const Image& raw_vessel_mask,
                           const BinaryMask& lesion_binary_mask, const ColorParams& params, std::uint64_t seed) {
  RepairResult r;
  r.vessels = preprocess_vessel_mask(raw_vessel_mask);
  require_same_size(r.vessels.width, r.vessels.height, inpainted_image.width, inpainted_image.height, "repair");
  if (r.vessels.empty()) {
    r.image = inpainted_image;
    r.skipped = true;
    r.intersection = BinaryMask(inpainted_image.width, inpainted_image.height);
    return r;
  }
  r.intersection = intersect(lesion_binary_mask, r.vessels);
  const VesselColorStats stats = extract_vessel_color_stats(original_image, r.vessels);
  const ColorField colored = generate_colored_vessels(r.vessels, stats, params, seed);
  r.image = blend_vessels(inpainted_image, colored, r.vessels, r.intersection, params);
  return r;
}

// ---------------------------------------------------------------------------
// Vessel sources

class VesselProvider {
 public:
  virtual ~VesselProvider() = default;
  /// Raw grayscale vessel map (H×W, one channel) for a sample.
  virtual Image vessels(const FundusSample& sample) const = 0;
};

class GroundTruthVessels : public VesselProvider {
 public:
  Image vessels(const FundusSample& sample) const override { return mask_to_image(sample.vessel_mask); }
};

/// Reads `<dir>/vessel_<id>.png` (or any pattern with `{id}` in it).
class FileVessels : public VesselProvider {
 public:
  explicit FileVessels(std::string pattern) : pattern_(std::move(pattern)) {}
  Image vessels(const FundusSample& sample) const override {
    std::string path = pattern_;
    const auto pos = path.find("{id}");
    if (pos != std::string::npos) path.replace(pos, 4, sample_id_string(sample.id));
    return read_png(path, 1);
  }

 private:
  std::string pattern_;
};

/// Dark-ridge response on the green channel: local 7×7 mean minus the pixel,
/// scaled by 4. Pixels near-black (outside the fundus field) respond 0.
class RidgeFilterVessels : public VesselProvider {
 public:
  Image vessels(const FundusSample& sample) const override { return ridge_response(sample.image); }

  static Image ridge_response(const Image& img) {
    Image out(img.width, img.height, 1);
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        const int g = img.at(x, y, 1);
        if (img.at(x, y, 0) < 10) continue;
        double sum = 0;
        int n = 0;
        for (int dy = -3; dy <= 3; ++dy)
          for (int dx = -3; dx <= 3; ++dx) {
            const int nx = x + dx, ny = y + dy;
            if (!img.contains(nx, ny) || img.at(nx, ny, 0) < 10) continue;
            sum += img.at(nx, ny, 1);
            ++n;
          }
        out.at(x, y) = clamp_to_byte(4.0 * (sum / n - g));
      }
    return out;
  }
};

}  // namespace twlr
