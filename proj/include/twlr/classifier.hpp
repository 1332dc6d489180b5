#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "twlr/encoder.hpp"
#include "twlr/error.hpp"
#include "twlr/synthgen.hpp"
#include "twlr/text_encoder.hpp"

namespace twlr {

inline constexpr int kNumClasses = kNumGrades + kNumLesions;
inline constexpr double kLogEpsilon = 1e-12;

using ClassVector = std::array<double, kNumClasses>;

struct PredictionRecord {
  ClassVector scores{};  // raw text·image similarities
  ClassVector probs{};   // softmax over grades, sigmoid per lesion
  int predicted_grade = 0;
  std::array<std::uint8_t, kNumLesions> predicted_lesions{};

  std::span<const double, kNumGrades> grade_probs() const {
    return std::span<const double, kNumGrades>(probs.data(), kNumGrades);
  }
};

/// Multi-hot target: one grade bit plus lesion bits, and its L1-normalized form.
struct TargetVector {
  ClassVector y{};
  ClassVector normalized{};

  static TargetVector make(int grade, const std::array<std::uint8_t, kNumLesions>& lesions) {
    if (grade < 0 || grade >= kNumGrades) throw InvalidInput("TargetVector: grade out of range");
    TargetVector t;
    t.y[grade] = 1.0;
    for (int k = 0; k < kNumLesions; ++k) t.y[kNumGrades + k] = lesions[k] ? 1.0 : 0.0;
    double l1 = 0;
    for (double v : t.y) l1 += v;
    for (int c = 0; c < kNumClasses; ++c) t.normalized[c] = t.y[c] / l1;
    return t;
  }
  static TargetVector make(const FundusSample& s) { return make(s.grade, s.lesion_flags); }
};

/// s = E_text · E_img for all nine class rows.
inline ClassVector similarity_scores(const Eigen::MatrixXd& text, const RowVec& image_embedding) {
  if (text.rows() != kNumClasses || text.cols() != image_embedding.size())
    throw InvalidInput("similarity_scores: expected 9xD text matrix matching a D-vector, got " +
                       std::to_string(text.rows()) + "x" + std::to_string(text.cols()) + " and " +
                       std::to_string(image_embedding.size()));
  ClassVector s{};
  Vec v = text * image_embedding.transpose();
  for (int c = 0; c < kNumClasses; ++c) s[c] = v[c];
  return s;
}

inline ClassVector similarity_scores(const TextEmbeddings& text, const RowVec& image_embedding) {
  return similarity_scores(text.concatenated(), image_embedding);
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

/// Temperature-scaled softmax over the grade block, independent sigmoids over
/// the lesion block. Ties in the grade argmax go to the lowest index.
inline PredictionRecord predict(const ClassVector& scores, double temperature) {
  PredictionRecord r;
  r.scores = scores;
  double mx = scores[0] * temperature;
  for (int g = 1; g < kNumGrades; ++g) mx = std::max(mx, scores[g] * temperature);
  double sum = 0;
  for (int g = 0; g < kNumGrades; ++g) {
    r.probs[g] = std::exp(scores[g] * temperature - mx);
    sum += r.probs[g];
  }
  for (int g = 0; g < kNumGrades; ++g) r.probs[g] /= sum;
  for (int k = 0; k < kNumLesions; ++k) {
    r.probs[kNumGrades + k] = sigmoid(scores[kNumGrades + k] * temperature);
    r.predicted_lesions[k] = r.probs[kNumGrades + k] > 0.5 ? 1 : 0;
  }
  // Compare the logits, not the rounded probabilities, so the argmax is exact.
  int best = 0;
  for (int g = 1; g < kNumGrades; ++g)
    if (scores[g] * temperature > scores[best] * temperature) best = g;
  r.predicted_grade = best;
  return r;
}

/// Per-sample term −Σ_c y_norm[c]·log ŷ[c], with ŷ clamped to ≥ 1e-12.
inline double sample_semantic_loss(const ClassVector& probs, const TargetVector& target) {
  double loss = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    if (target.normalized[c] == 0.0) continue;
    if (!std::isfinite(probs[c])) throw NumericalError("semantic_loss: non-finite probability");
    loss -= target.normalized[c] * std::log(std::max(probs[c], kLogEpsilon));
  }
  return loss;
}

/// Batch mean of the per-sample semantic loss.
inline double semantic_loss(std::span<const ClassVector> probs, std::span<const TargetVector> targets) {
  if (probs.empty()) throw InvalidInput("semantic_loss: empty batch");
  if (probs.size() != targets.size()) throw InvalidInput("semantic_loss: batch size mismatch");
  double total = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) total += sample_semantic_loss(probs[i], targets[i]);
  return total / static_cast<double>(probs.size());
}

struct ScoreGradient {
  ClassVector d_scores{};
  double d_log_temperature = 0;
};

/// Gradient of sample_semantic_loss(predict(scores, τ)) with respect to the
/// scores and log τ. Terms whose probability hit the clamp contribute nothing.
inline ScoreGradient semantic_loss_score_gradient(const PredictionRecord& pred, double temperature,
                                                  const TargetVector& target) {
  ClassVector d_logits{};
  for (int c = 0; c < kNumGrades; ++c) {
    const double w = target.normalized[c];
    if (w == 0.0 || pred.probs[c] < kLogEpsilon) continue;
    for (int g = 0; g < kNumGrades; ++g) d_logits[g] += w * pred.probs[g];
    d_logits[c] -= w;
  }
  for (int k = 0; k < kNumLesions; ++k) {
    const int c = kNumGrades + k;
    const double w = target.normalized[c];
    if (w == 0.0 || pred.probs[c] < kLogEpsilon) continue;
    d_logits[c] -= w * (1.0 - pred.probs[c]);
  }
  ScoreGradient g;
  double d_temp = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    g.d_scores[c] = d_logits[c] * temperature;
    d_temp += d_logits[c] * pred.scores[c];
  }
  g.d_log_temperature = d_temp * temperature;
  return g;
}

/// Forward + backward for one sample. Returns the per-sample loss and, when
/// `grads` is non-null, accumulates `weight`·∂loss/∂θ into it.
inline double sample_loss_and_gradient(const Mat& patches, const EncoderParams& params,
                                       const Eigen::MatrixXd& text, const TargetVector& target,
                                       EncoderParams* grads, double weight = 1.0) {
  ForwardCache fc = encode_patches(patches, params);
  const double tau = params.temperature();
  PredictionRecord pred = predict(similarity_scores(text, fc.embedding), tau);
  const double loss = sample_semantic_loss(pred.probs, target);
  if (grads) {
    ScoreGradient sg = semantic_loss_score_gradient(pred, tau, target);
    Vec ds(kNumClasses);
    for (int c = 0; c < kNumClasses; ++c) ds[c] = weight * sg.d_scores[c];
    RowVec d_embedding = (text.transpose() * ds).transpose();
    encoder_backward(fc, params, d_embedding, grads);
    grads->log_temperature(0, 0) += weight * sg.d_log_temperature;
  }
  return loss;
}

}  // namespace twlr
