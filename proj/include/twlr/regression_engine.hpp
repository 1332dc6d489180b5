#pragma once

#include <atomic>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "twlr/error.hpp"
#include "twlr/image.hpp"
#include "twlr/inpaint.hpp"
#include "twlr/model.hpp"
#include "twlr/morphology.hpp"
#include "twlr/rng.hpp"
#include "twlr/saliency.hpp"
#include "twlr/synthgen.hpp"
#include "twlr/vessel_repair.hpp"

namespace twlr {

/// Grades {2,3,4} call for referral.
inline bool classify_referable(int predicted_grade) {
  if (predicted_grade < 0 || predicted_grade >= kNumGrades)
    throw InvalidInput("classify_referable: grade out of range");
  return predicted_grade >= 2;
}

struct LoopParams {
  int max_iterations = 10;
  bool dilate_mask = false;  // 3×3 dilation of each binary mask before inpainting
  bool repair_vessels = true;
  ColorParams color;
  std::uint64_t seed = 0;

  void validate() const {
    if (max_iterations < 1) throw InvalidInput("loop: max_iterations must be >= 1");
    color.validate();
  }
};

enum class Termination { NonReferable, MaxIterations, InpaintDegenerate };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::NonReferable: return "nonreferable";
    case Termination::MaxIterations: return "max_iterations";
    case Termination::InpaintDegenerate: return "inpaint_degenerate";
  }
  return "?";
}

struct IterationTrace {
  int iteration = 0;            // 1-based inpaint cycle
  PredictionRecord prediction;  // grading that triggered this cycle
  SaliencyMap saliency;
  BinaryMask binary_mask;
  BinaryMask accumulated_mask;
  Image inpainted;  // inpainter output
  Image repaired;   // after vessel repair; fed to the next grading
  bool repair_skipped = false;
  bool dilated = false;
  PredictionRecord regraded;  // grading of `repaired`
};

struct LoopResult {
  Image final_image;
  BinaryMask accumulated_mask;
  int iterations = 0;  // completed inpaint cycles T_i
  Termination reason = Termination::NonReferable;
  bool no_progress = false;  // stopped on an empty saliency mask
  PredictionRecord initial_prediction;
  PredictionRecord final_prediction;
  std::vector<IterationTrace> traces;

  /// Predicted grade after 0, 1, ..., T_i cycles.
  std::vector<int> class_history() const {
    std::vector<int> h{initial_prediction.predicted_grade};
    for (const auto& t : traces) h.push_back(t.regraded.predicted_grade);
    return h;
  }
};

/// Grade → saliency → binarize → accumulate → inpaint → repair → re-grade,
/// until the grade is non-referable, `max_iterations` cycles have run, the
/// saliency mask comes back empty, or the inpainter rejects the mask.
/// `raw_vessels` is the grayscale vessel map of the original image; pass an
/// empty image to disable repair.
inline LoopResult run_loop(const Image& image, const Grader& model, const Inpainter& inpainter,
                           const Image& raw_vessels, const LoopParams& params) {
  params.validate();
  LoopResult res;
  res.accumulated_mask = BinaryMask(image.width, image.height);
  Image current = image;

  PredictionRecord pred;
  try {
    pred = model.grade(current);
  } catch (const std::exception& e) {
    throw LoopError(0, e.what());
  }
  res.initial_prediction = pred;

  for (int t = 1;; ++t) {
    if (!classify_referable(pred.predicted_grade)) {
      res.reason = Termination::NonReferable;
      break;
    }
    if (t > params.max_iterations) {
      res.reason = Termination::MaxIterations;
      break;
    }
    IterationTrace tr;
    tr.iteration = t;
    tr.prediction = pred;
    Image inpainted;
    try {
      tr.saliency = model.saliency(current, pred.predicted_grade);
      tr.saliency.iteration = t;
      tr.binary_mask = binarize(tr.saliency);
      if (params.dilate_mask) {
        tr.binary_mask = dilate(tr.binary_mask, StructuringElement::Square3);
        tr.dilated = true;
      }
      if (tr.binary_mask.empty()) {
        res.reason = Termination::MaxIterations;
        res.no_progress = true;
        break;
      }
      inpainted = inpainter.inpaint(current, tr.binary_mask);
    } catch (const DegenerateMaskError&) {
      res.reason = Termination::InpaintDegenerate;
      break;
    } catch (const std::exception& e) {
      throw LoopError(t, e.what());
    }

    res.accumulated_mask = mask_union(res.accumulated_mask, tr.binary_mask);
    tr.accumulated_mask = res.accumulated_mask;
    tr.inpainted = inpainted;
    try {
      if (params.repair_vessels && !raw_vessels.data.empty()) {
        RepairResult rep = repair(inpainted, image, raw_vessels, tr.binary_mask, params.color,
                                  derive_seed(params.seed, "loop.repair", t));
        tr.repaired = std::move(rep.image);
        tr.repair_skipped = rep.skipped;
      } else {
        tr.repaired = inpainted;
        tr.repair_skipped = true;
      }
      current = tr.repaired;
      pred = model.grade(current);
    } catch (const std::exception& e) {
      throw LoopError(t, e.what());
    }
    tr.regraded = pred;
    res.traces.push_back(std::move(tr));
    res.iterations = t;
  }
  res.final_image = current;
  res.final_prediction = pred;
  return res;
}

inline LoopResult run_loop(const FundusSample& sample, const Grader& model, const Inpainter& inpainter,
                           const VesselProvider& vessels, const LoopParams& params) {
  LoopParams p = params;
  p.seed = derive_seed(params.seed, "loop.image", sample.id);
  return run_loop(sample.image, model, inpainter, vessels.vessels(sample), p);
}

struct BatchItem {
  int id = 0;
  std::optional<LoopResult> result;
  std::string error;  // set iff result is empty
};

/// Independent run_loop per sample. Output order matches input order and
/// does not depend on `workers`; one image's failure does not affect others.
inline std::vector<BatchItem> run_batch(const std::vector<FundusSample>& samples, const Grader& model,
                                        const Inpainter& inpainter, const VesselProvider& vessels,
                                        const LoopParams& params, int workers = 1) {
  std::vector<BatchItem> items(samples.size());
  auto work = [&](std::size_t i) {
    items[i].id = samples[i].id;
    try {
      items[i].result = run_loop(samples[i], model, inpainter, vessels, params);
    } catch (const std::exception& e) {
      items[i].error = e.what();
    }
  };
  if (workers <= 1 || samples.size() <= 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) work(i);
    return items;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const int n = std::min<int>(workers, static_cast<int>(samples.size()));
  for (int w = 0; w < n; ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < samples.size();) work(i);
    });
  for (auto& th : pool) th.join();
  return items;
}

}  // namespace twlr
