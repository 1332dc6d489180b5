#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "twlr/classifier.hpp"
#include "twlr/error.hpp"
#include "twlr/image.hpp"
#include "twlr/synthgen.hpp"

namespace twlr {

// ---------------------------------------------------------------------------
// Segmentation

struct PixelCounts {
  std::int64_t tp = 0, fp = 0, fn = 0;
  PixelCounts& operator+=(const PixelCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

/// Percentages. `sensitivity` is empty when the ground truth has no pixels.
struct SegResult {
  std::optional<double> sensitivity;
  double iou = 0;
  double dice = 0;
};

inline PixelCounts count_pixels(const BinaryMask& pred, const BinaryMask& gt) {
  require_same_size(pred.width, pred.height, gt.width, gt.height, "seg_metrics");
  PixelCounts c;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    c.tp += p && g;
    c.fp += p && !g;
    c.fn += !p && g;
  }
  return c;
}

inline SegResult seg_metrics(const PixelCounts& c) {
  SegResult r;
  if (c.tp + c.fn == 0) {
    // Empty ground truth: nothing to find. Agreement only if nothing predicted.
    r.iou = r.dice = c.fp == 0 ? 100.0 : 0.0;
    return r;
  }
  const double tp = static_cast<double>(c.tp);
  r.sensitivity = 100.0 * tp / static_cast<double>(c.tp + c.fn);
  r.iou = 100.0 * tp / static_cast<double>(c.tp + c.fp + c.fn);
  r.dice = 100.0 * 2.0 * tp / static_cast<double>(2 * c.tp + c.fp + c.fn);
  return r;
}

inline SegResult seg_metrics(const BinaryMask& pred, const BinaryMask& gt) { return seg_metrics(count_pixels(pred, gt)); }

inline constexpr int kSegClasses = kNumLesions + 1;  // bg, MA, HE, SE, EX
inline const std::array<const char*, kSegClasses> kSegClassNames{"bg", "MA", "HE", "SE", "EX"};

struct SegClassScore {
  PixelCounts pooled;
  SegResult pooled_metrics;              // from counts summed over images
  std::optional<double> mean_sensitivity;  // over images containing the class
  int images_with_class = 0;
  int images_skipped = 0;  // class absent from the image's ground truth
};

struct SegScores {
  std::array<SegClassScore, kSegClasses> classes;
  int images = 0;
  // Means over the four lesion classes ("without background") and over all five.
  double sensitivity_wo_bg = 0, iou_wo_bg = 0, dice_wo_bg = 0;
  double sensitivity_all = 0, iou_all = 0, dice_all = 0;
  // Every lesion pixel of every image, regardless of class.
  SegResult lesion_union;
};

/// Accumulated masks are class-agnostic, so each lesion class is scored as the
/// coverage of its own ground truth by the one predicted mask. Background
/// ground truth is the complement of the lesion union and is scored against
/// the complement of the prediction.
inline SegScores seg_scores(const std::vector<BinaryMask>& predicted, const std::vector<const FundusSample*>& samples) {
  if (predicted.size() != samples.size()) throw InvalidInput("seg_scores: prediction/sample count mismatch");
  SegScores s;
  s.images = static_cast<int>(samples.size());
  std::array<double, kSegClasses> sens_sum{};
  PixelCounts union_counts;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const FundusSample& sm = *samples[i];
    const BinaryMask& pred = predicted[i];
    const BinaryMask lesions = sm.lesion_union();
    std::array<BinaryMask, kSegClasses> gt;
    gt[0] = mask_complement(lesions);
    for (int k = 0; k < kNumLesions; ++k) gt[k + 1] = sm.lesion_masks[k];
    const BinaryMask pred_bg = mask_complement(pred);
    for (int k = 0; k < kSegClasses; ++k) {
      const PixelCounts c = count_pixels(k == 0 ? pred_bg : pred, gt[k]);
      auto& cls = s.classes[k];
      cls.pooled += c;
      if (c.tp + c.fn == 0) {
        ++cls.images_skipped;
      } else {
        ++cls.images_with_class;
        sens_sum[k] += *seg_metrics(c).sensitivity;
      }
    }
    union_counts += count_pixels(pred, lesions);
  }
  for (int k = 0; k < kSegClasses; ++k) {
    auto& cls = s.classes[k];
    cls.pooled_metrics = seg_metrics(cls.pooled);
    if (cls.images_with_class > 0) cls.mean_sensitivity = sens_sum[k] / cls.images_with_class;
  }
  auto average = [&](int from, double SegResult::*field, bool sensitivity) {
    double sum = 0;
    int n = 0;
    for (int k = from; k < kSegClasses; ++k) {
      const SegResult& r = s.classes[k].pooled_metrics;
      if (sensitivity) {
        if (!r.sensitivity) continue;
        sum += *r.sensitivity;
      } else {
        sum += r.*field;
      }
      ++n;
    }
    return n ? sum / n : 0.0;
  };
  s.sensitivity_wo_bg = average(1, nullptr, true);
  s.iou_wo_bg = average(1, &SegResult::iou, false);
  s.dice_wo_bg = average(1, &SegResult::dice, false);
  s.sensitivity_all = average(0, nullptr, true);
  s.iou_all = average(0, &SegResult::iou, false);
  s.dice_all = average(0, &SegResult::dice, false);
  s.lesion_union = seg_metrics(union_counts);
  return s;
}

// ---------------------------------------------------------------------------
// Classification

/// Rank-statistic (Mann-Whitney) AUC with midranks for ties. Empty when either
/// class is missing.
inline std::optional<double> rank_auc(const std::vector<double>& scores, const std::vector<int>& positive) {
  if (scores.size() != positive.size()) throw InvalidInput("rank_auc: size mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double n_pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (positive[i]) {
      ++n_pos;
      rank_sum += rank[i];
    }
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

using Confusion = std::array<std::array<std::int64_t, kNumGrades>, kNumGrades>;

/// Quadratic weighted kappa, weights (i−j)²/(K−1)². A degenerate matrix where
/// expected disagreement is zero returns 1 if observed disagreement is also
/// zero, else 0.
inline double quadratic_weighted_kappa(const Confusion& m) {
  constexpr int K = kNumGrades;
  double total = 0;
  std::array<double, K> rows{}, cols{};
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) {
      total += m[i][j];
      rows[i] += m[i][j];
      cols[j] += m[i][j];
    }
  if (total == 0) throw InvalidInput("quadratic_weighted_kappa: empty confusion matrix");
  double observed = 0, expected = 0;
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) {
      const double w = static_cast<double>((i - j) * (i - j)) / ((K - 1) * (K - 1));
      observed += w * m[i][j] / total;
      expected += w * rows[i] * cols[j] / (total * total);
    }
  if (expected == 0) return observed == 0 ? 1.0 : 0.0;
  return 1.0 - observed / expected;
}

struct GroundTruthLabel {
  int grade = 0;
  std::array<int, kNumLesions> lesions{};
};

struct ClassificationMetrics {
  double accuracy = 0;  // percent, over all 9 binary decisions per image
  std::optional<double> auc;        // macro over grade and lesion classes
  std::optional<double> auc_grade;  // macro one-vs-rest on softmax probabilities
  std::optional<double> auc_lesion;
  std::optional<double> f1;  // percent, macro over the 9 binary decisions
  double kappa = 0;
  double grade_accuracy = 0;  // percent, 5-way
  std::optional<double> referable_sensitivity;  // percent
  std::optional<double> referable_specificity;
  Confusion confusion{};
  std::vector<std::string> skipped;  // classes absent from the labels (or with no negatives for AUC)
};

inline std::string class_name(int c) {
  return c < kNumGrades ? "grade" + std::to_string(c) : std::string(kLesionNames[c - kNumGrades]);
}

inline ClassificationMetrics classification_metrics(const std::vector<PredictionRecord>& predictions,
                                                    const std::vector<GroundTruthLabel>& labels) {
  if (predictions.empty() || predictions.size() != labels.size())
    throw InvalidInput("classification_metrics: need non-empty aligned predictions and labels");
  const std::size_t n = labels.size();
  ClassificationMetrics m;
  std::array<std::vector<int>, kNumClasses> truth, decided;
  std::array<std::vector<double>, kNumClasses> score;
  std::int64_t correct = 0, grade_correct = 0;
  std::int64_t ref_tp = 0, ref_fn = 0, ref_tn = 0, ref_fp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = predictions[i];
    const auto& l = labels[i];
    if (l.grade < 0 || l.grade >= kNumGrades || p.predicted_grade < 0 || p.predicted_grade >= kNumGrades)
      throw InvalidInput("classification_metrics: grade out of range");
    m.confusion[l.grade][p.predicted_grade]++;
    grade_correct += l.grade == p.predicted_grade;
    const bool ref_true = l.grade >= 2, ref_pred = p.predicted_grade >= 2;
    ref_tp += ref_true && ref_pred;
    ref_fn += ref_true && !ref_pred;
    ref_tn += !ref_true && !ref_pred;
    ref_fp += !ref_true && ref_pred;
    for (int c = 0; c < kNumClasses; ++c) {
      const int t = c < kNumGrades ? (l.grade == c) : l.lesions[c - kNumGrades];
      const int d = c < kNumGrades ? (p.predicted_grade == c) : p.predicted_lesions[c - kNumGrades];
      truth[c].push_back(t);
      decided[c].push_back(d);
      score[c].push_back(p.probs[c]);
      correct += t == d;
    }
  }
  m.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(n * kNumClasses);
  m.grade_accuracy = 100.0 * static_cast<double>(grade_correct) / static_cast<double>(n);
  if (ref_tp + ref_fn) m.referable_sensitivity = 100.0 * ref_tp / static_cast<double>(ref_tp + ref_fn);
  if (ref_tn + ref_fp) m.referable_specificity = 100.0 * ref_tn / static_cast<double>(ref_tn + ref_fp);

  double auc_g = 0, auc_l = 0, f1_sum = 0;
  int n_auc_g = 0, n_auc_l = 0, n_f1 = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    std::int64_t tp = 0, fp = 0, fn = 0, pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      pos += truth[c][i];
      tp += truth[c][i] && decided[c][i];
      fp += !truth[c][i] && decided[c][i];
      fn += truth[c][i] && !decided[c][i];
    }
    if (pos == 0) {
      m.skipped.push_back(class_name(c));
      continue;
    }
    f1_sum += 100.0 * 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
    ++n_f1;
    if (auto a = rank_auc(score[c], truth[c])) {
      (c < kNumGrades ? auc_g : auc_l) += *a;
      ++(c < kNumGrades ? n_auc_g : n_auc_l);
    } else {
      m.skipped.push_back(class_name(c) + " (auc)");
    }
  }
  if (n_f1) m.f1 = f1_sum / n_f1;
  if (n_auc_g) m.auc_grade = auc_g / n_auc_g;
  if (n_auc_l) m.auc_lesion = auc_l / n_auc_l;
  if (n_auc_g + n_auc_l) m.auc = (auc_g + auc_l) / (n_auc_g + n_auc_l);
  m.kappa = quadratic_weighted_kappa(m.confusion);
  return m;
}

// ---------------------------------------------------------------------------
// Loop outcomes

struct ReductionCurve {
  int initially_referable = 0;
  std::vector<double> rate;  // rate[t-1]: fraction non-referable at or before cycle t
  bool defined() const { return initially_referable > 0; }
};

/// `histories[i]` is the predicted grade after 0, 1, ..., T_i cycles. The curve
/// runs to the longest history among initially-referable images.
inline ReductionCurve reduction_curve(const std::vector<std::vector<int>>& histories) {
  ReductionCurve curve;
  std::size_t horizon = 0;
  for (const auto& h : histories) {
    if (h.empty()) throw InvalidInput("reduction_curve: empty class history");
    if (h[0] >= 2) {
      ++curve.initially_referable;
      horizon = std::max(horizon, h.size() - 1);
    }
  }
  if (!curve.defined()) return curve;
  curve.rate.assign(horizon, 0.0);
  for (const auto& h : histories) {
    if (h[0] < 2) continue;
    std::size_t first = 0;
    for (std::size_t t = 1; t < h.size(); ++t)
      if (h[t] < 2) {
        first = t;
        break;
      }
    if (first == 0) continue;
    for (std::size_t t = first; t <= horizon; ++t) curve.rate[t - 1] += 1.0;
  }
  for (double& r : curve.rate) r /= curve.initially_referable;
  return curve;
}

using TransitionFlow = Confusion;

inline TransitionFlow transition_flow(const std::vector<int>& labels, const std::vector<int>& final_predictions) {
  if (labels.size() != final_predictions.size()) throw InvalidInput("transition_flow: size mismatch");
  TransitionFlow f{};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kNumGrades || final_predictions[i] < 0 || final_predictions[i] >= kNumGrades)
      throw InvalidInput("transition_flow: grade out of range");
    f[labels[i]][final_predictions[i]]++;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Report

struct MetricReport {
  ClassificationMetrics classification;  // initial predictions on the evaluation set
  SegScores segmentation;                // accumulated masks of initially-referable images
  ReductionCurve reduction;
  TransitionFlow transitions{};
  int images = 0;
  int failed = 0;
  std::vector<int> iterations_histogram;  // count of images by T_i
};

inline nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["images"] = r.images;
  j["failed"] = r.failed;
  const auto& c = r.classification;
  j["classification"] = {
      {"accuracy", c.accuracy},
      {"grade_accuracy", c.grade_accuracy},
      {"auc", optional_json(c.auc)},
      {"auc_grade", optional_json(c.auc_grade)},
      {"auc_lesion", optional_json(c.auc_lesion)},
      {"f1", optional_json(c.f1)},
      {"kappa", c.kappa},
      {"referable_sensitivity", optional_json(c.referable_sensitivity)},
      {"referable_specificity", optional_json(c.referable_specificity)},
      {"confusion", c.confusion},
      {"skipped", c.skipped},
  };
  const auto& s = r.segmentation;
  ordered_json classes = ordered_json::object();
  for (int k = 0; k < kSegClasses; ++k) {
    const auto& cls = s.classes[k];
    classes[kSegClassNames[k]] = {
        {"sensitivity", optional_json(cls.pooled_metrics.sensitivity)},
        {"iou", cls.pooled_metrics.iou},
        {"dice", cls.pooled_metrics.dice},
        {"mean_image_sensitivity", optional_json(cls.mean_sensitivity)},
        {"images_with_class", cls.images_with_class},
        {"images_skipped", cls.images_skipped},
        {"tp", cls.pooled.tp},
        {"fp", cls.pooled.fp},
        {"fn", cls.pooled.fn},
    };
  }
  j["segmentation"] = {
      {"images", s.images},
      {"scope", "initially referable images; lesion classes scored by coverage of their own ground truth"},
      {"classes", classes},
      {"overall_wo_bg", {{"sensitivity", s.sensitivity_wo_bg}, {"iou", s.iou_wo_bg}, {"dice", s.dice_wo_bg}}},
      {"overall", {{"sensitivity", s.sensitivity_all}, {"iou", s.iou_all}, {"dice", s.dice_all}}},
      {"lesion_union",
       {{"sensitivity", optional_json(s.lesion_union.sensitivity)},
        {"iou", s.lesion_union.iou},
        {"dice", s.lesion_union.dice}}},
  };
  j["reduction"] = {
      {"initially_referable", r.reduction.initially_referable},
      {"defined", r.reduction.defined()},
      {"rate", r.reduction.rate},
  };
  j["transitions"] = r.transitions;
  j["iterations_histogram"] = r.iterations_histogram;
  return j;
}

inline void write_report_json(const std::filesystem::path& path, const MetricReport& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(r).dump(2) << "\n";
}

/// One row per metric×class: `metric,class,value`. Undefined values are blank.
inline void write_metrics_csv(const std::filesystem::path& path, const MetricReport& r) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "metric,class,value\n";
  auto row = [&](const std::string& metric, const std::string& cls, const std::optional<double>& v) {
    out << metric << "," << cls << ",";
    if (v) out << nlohmann::json(*v).dump();
    out << "\n";
  };
  const auto& c = r.classification;
  row("accuracy", "all", c.accuracy);
  row("grade_accuracy", "grade", c.grade_accuracy);
  row("auc", "all", c.auc);
  row("auc", "grade", c.auc_grade);
  row("auc", "lesion", c.auc_lesion);
  row("f1", "all", c.f1);
  row("kappa", "grade", c.kappa);
  row("sensitivity", "referable", c.referable_sensitivity);
  row("specificity", "referable", c.referable_specificity);
  const auto& s = r.segmentation;
  for (int k = 0; k < kSegClasses; ++k) {
    const auto& m = s.classes[k].pooled_metrics;
    row("seg_sensitivity", kSegClassNames[k], m.sensitivity);
    row("seg_iou", kSegClassNames[k], m.iou);
    row("seg_dice", kSegClassNames[k], m.dice);
  }
  row("seg_sensitivity", "overall_wo_bg", s.sensitivity_wo_bg);
  row("seg_iou", "overall_wo_bg", s.iou_wo_bg);
  row("seg_dice", "overall_wo_bg", s.dice_wo_bg);
  row("seg_sensitivity", "overall", s.sensitivity_all);
  row("seg_iou", "overall", s.iou_all);
  row("seg_dice", "overall", s.dice_all);
  row("seg_sensitivity", "lesion_union", s.lesion_union.sensitivity);
  for (std::size_t t = 0; t < r.reduction.rate.size(); ++t)
    row("reduction_rate", "iter" + std::to_string(t + 1), r.reduction.rate[t]);
}

}  // namespace twlr
