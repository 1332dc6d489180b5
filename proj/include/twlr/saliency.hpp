#pragma once

#include <cmath>

#include "twlr/classifier.hpp"
#include "twlr/encoder.hpp"
#include "twlr/error.hpp"
#include "twlr/image.hpp"
#include "twlr/morphology.hpp"

namespace twlr {

struct SaliencyMap {
  FloatMap values;
  int source_class = 0;
  int iteration = 0;
};

/// Guided-backpropagation saliency of the raw similarity score of
/// `target_class` with respect to the input pixels. Per pixel the value is the
/// largest absolute gradient over the three channels.
inline SaliencyMap guided_backprop(const Image& image, const EncoderParams& params,
                                   const Eigen::MatrixXd& text, int target_class) {
  if (target_class < 0 || target_class >= kNumGrades)
    throw InvalidInput("guided_backprop: target_class must be a grade in 0..4");
  if (text.rows() != kNumClasses || text.cols() != params.config.dim)
    throw InvalidInput("guided_backprop: text embedding shape mismatch");
  ForwardCache fc = encode_image_cached(image, params);
  RowVec d_embedding = text.row(target_class);
  Mat dpatch = encoder_backward(fc, params, d_embedding, nullptr, ReluBackward::Guided) * kPixelScale;
  if (!dpatch.allFinite())
    throw NumericalError("guided_backprop: non-finite input gradient for class " +
                         std::to_string(target_class) + " (cls norm " + std::to_string(fc.cls_norm) + ")");

  const int P = params.config.patch_size;
  const int gx = image.width / P;
  SaliencyMap sal;
  sal.source_class = target_class;
  sal.values = FloatMap(image.width, image.height);
  for (int row = 0; row < dpatch.rows(); ++row) {
    const int px = row % gx, py = row / gx;
    int col = 0;
    for (int y = 0; y < P; ++y)
      for (int x = 0; x < P; ++x) {
        double best = 0;
        for (int c = 0; c < 3; ++c) best = std::max(best, std::abs(dpatch(row, col++)));
        sal.values.at(px * P + x, py * P + y) = best;
      }
  }
  return sal;
}

inline SaliencyMap guided_backprop(const Image& image, const EncoderParams& params,
                                   const TextEmbeddings& text, int target_class) {
  return guided_backprop(image, params, text.concatenated(), target_class);
}

/// Threshold at the map's own mean plus one population standard deviation;
/// strictly greater values are set.
inline BinaryMask binarize(const SaliencyMap& saliency) {
  const auto& v = saliency.values.data;
  BinaryMask mask(saliency.values.width, saliency.values.height);
  if (v.empty()) return mask;
  // A flat map has σ = 0 exactly; rounding in the mean must not leak pixels.
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  if (*lo == *hi) return mask;
  double mean = 0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  const double threshold = mean + std::sqrt(var);
  for (std::size_t i = 0; i < v.size(); ++i) mask.data[i] = v[i] > threshold ? 1 : 0;
  return mask;
}

}  // namespace twlr
