#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "twlr/checkpoint.hpp"
#include "twlr/config.hpp"
#include "twlr/evaluation.hpp"
#include "twlr/inpaint.hpp"
#include "twlr/model.hpp"
#include "twlr/plots.hpp"
#include "twlr/png_io.hpp"
#include "twlr/regression_engine.hpp"
#include "twlr/synthgen.hpp"
#include "twlr/text_encoder.hpp"
#include "twlr/trainer.hpp"

namespace twlr {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace detail {

inline void write_json(const fs::path& path, const ojson& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

inline ojson prediction_json(const PredictionRecord& p) {
  return {{"class", p.predicted_grade},
          {"probs", p.probs},
          {"scores", p.scores},
          {"lesions", p.predicted_lesions}};
}

inline PredictionRecord prediction_from_json(const nlohmann::json& j) {
  PredictionRecord p;
  p.predicted_grade = j.at("class");
  p.probs = j.at("probs").get<ClassVector>();
  p.scores = j.at("scores").get<ClassVector>();
  p.predicted_lesions = j.at("lesions").get<decltype(p.predicted_lesions)>();
  return p;
}

inline DescriptionSet descriptions_for(const RunConfig& c) {
  return c.descriptions.empty() ? default_descriptions(c.encoder.dim) : load_descriptions(c.descriptions, c.encoder.dim);
}

inline fs::path trace_dir(const RunConfig& c, int id) { return c.run_path() / "traces" / sample_id_string(id); }

}  // namespace detail

/// Writes the training and held-out splits under the data directory.
inline ojson cmd_generate(const RunConfig& c) {
  SynthConfig train_cfg = c.synth;
  train_cfg.seed = c.seed_for("synth.train");
  SynthConfig test_cfg = c.synth;
  test_cfg.seed = c.seed_for("synth.test");
  const auto train = generate_dataset(train_cfg, c.train_counts);
  const auto test = generate_dataset(test_cfg, c.test_counts);
  const fs::path dir = c.data_path();
  fs::remove_all(dir / "train");
  fs::remove_all(dir / "test");
  write_dataset(dir / "train", train);
  write_dataset(dir / "test", test);
  write_effective_config(dir, c);
  return {{"command", "generate"}, {"data_dir", dir.string()}, {"train", train.size()}, {"test", test.size()}};
}

inline ojson cmd_train(const RunConfig& c) {
  const auto data = read_dataset(c.data_path() / "train");
  if (data.empty()) throw InvalidInput("training split is empty: " + (c.data_path() / "train").string());
  const TextEmbeddings text = encode_text(detail::descriptions_for(c));
  EncoderParams params = init_encoder(c.encoder, c.seed_for("encoder"));
  TrainHyper hyper = c.train;
  hyper.seed = c.seed_for("train");
  TrainLog log;
  params = train(data, std::move(params), text.concatenated(), hyper, &log);

  const fs::path ckpt = c.checkpoint_path();
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, Checkpoint{params, text.concatenated()});
  const fs::path dir = c.out() / "train";
  write_effective_config(dir, c);
  detail::write_json(dir / "train_log.json", {{"initial_loss", log.initial_loss},
                                              {"final_loss", log.final_loss},
                                              {"epoch_loss", log.epoch_loss},
                                              {"temperature", params.temperature()}});
  return {{"command", "train"},
          {"checkpoint", ckpt.string()},
          {"samples", data.size()},
          {"initial_loss", log.initial_loss},
          {"final_loss", log.final_loss}};
}

inline std::unique_ptr<Inpainter> make_inpainter(const RunConfig& c) {
  if (c.inpainter == InpainterKind::External)
    return std::make_unique<ExternalInpainter>(c.inpaint_command, fs::absolute(c.run_path() / "inpaint_work"),
                                               c.inpaint_timeout);
  return std::make_unique<HarmonicInpainter>(c.inpaint_max_sweeps);
}

inline std::unique_ptr<VesselProvider> make_vessel_provider(const RunConfig& c) {
  switch (c.vessels) {
    case VesselSource::File: return std::make_unique<FileVessels>(c.vessel_pattern);
    case VesselSource::Ridge: return std::make_unique<RidgeFilterVessels>();
    case VesselSource::GroundTruth: break;
  }
  return std::make_unique<GroundTruthVessels>();
}

namespace detail {

inline void write_trace(const fs::path& dir, const FundusSample& s, const LoopResult& r) {
  fs::create_directories(dir);
  ojson iters = ojson::array();
  for (const auto& t : r.traces) {
    const std::string stem = "iter_" + std::to_string(t.iteration) + "_";
    Image sal;
    const auto [lo, hi] = float_map_to_image(t.saliency.values, sal);
    write_png(dir / (stem + "saliency.png"), sal);
    write_json(dir / (stem + "saliency.json"),
               {{"source_class", t.saliency.source_class}, {"min", lo}, {"max", hi},
                {"mapping", "byte = round(255 * (value - min) / (max - min)), 0 when max == min"}});
    write_png(dir / (stem + "mask.png"), mask_to_image(t.binary_mask));
    write_png(dir / (stem + "inpainted.png"), t.inpainted);
    write_png(dir / (stem + "repaired.png"), t.repaired);
    iters.push_back({{"t", t.iteration},
                     {"prediction", prediction_json(t.prediction)},
                     {"mask_pixels", t.binary_mask.pixel_count()},
                     {"accumulated_pixels", t.accumulated_mask.pixel_count()},
                     {"dilated", t.dilated},
                     {"repair_skipped", t.repair_skipped},
                     {"regraded", prediction_json(t.regraded)}});
  }
  write_png(dir / "accumulated_mask.png", mask_to_image(r.accumulated_mask));
  write_png(dir / "final.png", r.final_image);
  write_json(dir / "trace.json", {{"id", sample_id_string(s.id)},
                                  {"label_grade", s.grade},
                                  {"initial", prediction_json(r.initial_prediction)},
                                  {"iterations", iters},
                                  {"T", r.iterations},
                                  {"termination_reason", to_string(r.reason)},
                                  {"no_progress", r.no_progress},
                                  {"final", prediction_json(r.final_prediction)}});
}

}  // namespace detail

/// Runs the severity-regression loop on the held-out split, writing one trace
/// directory per image and a results summary.
inline ojson cmd_run(const RunConfig& c) {
  const Checkpoint ck = load_checkpoint(c.checkpoint_path());
  const auto test = read_dataset(c.data_path() / "test");
  const VisionLanguageModel model(ck.params, ck.text);
  const auto inpainter = make_inpainter(c);
  const auto vessels = make_vessel_provider(c);
  LoopParams lp;
  lp.max_iterations = c.max_iterations;
  lp.dilate_mask = c.dilate_mask;
  lp.repair_vessels = c.repair_vessels;
  lp.color = c.color;
  lp.seed = c.seed_for("loop");

  const auto items = run_batch(test, model, *inpainter, *vessels, lp, c.workers);

  fs::remove_all(c.run_path());
  fs::create_directories(c.run_path());
  write_effective_config(c.run_path(), c);
  ojson images = ojson::array();
  int failed = 0, flipped = 0, referable = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& s = test[i];
    ojson rec = {{"id", sample_id_string(s.id)}, {"label_grade", s.grade}, {"label_lesions", s.lesion_flags}};
    if (!items[i].result) {
      ++failed;
      rec["error"] = items[i].error;
      detail::write_json(detail::trace_dir(c, s.id) / "trace.json",
                         {{"id", sample_id_string(s.id)}, {"error", items[i].error}});
      images.push_back(rec);
      continue;
    }
    const LoopResult& r = *items[i].result;
    detail::write_trace(detail::trace_dir(c, s.id), s, r);
    const bool was_referable = classify_referable(r.initial_prediction.predicted_grade);
    referable += was_referable;
    flipped += was_referable && r.reason == Termination::NonReferable;
    rec["initial"] = detail::prediction_json(r.initial_prediction);
    rec["final_class"] = r.final_prediction.predicted_grade;
    rec["class_history"] = r.class_history();
    rec["T"] = r.iterations;
    rec["termination_reason"] = to_string(r.reason);
    rec["no_progress"] = r.no_progress;
    images.push_back(rec);
  }
  detail::write_json(c.run_path() / "results.json", {{"max_iterations", c.max_iterations}, {"images", images}});
  return {{"command", "run"},
          {"images", items.size()},
          {"failed", failed},
          {"initially_referable", referable},
          {"now_nonreferable", flipped}};
}

/// Metrics from the run results against the held-out ground truth.
inline MetricReport evaluate_run(const RunConfig& c) {
  const auto results = detail::read_json(c.run_path() / "results.json");
  const auto test = read_dataset(c.data_path() / "test");
  std::map<std::string, const FundusSample*> by_id;
  for (const auto& s : test) by_id[sample_id_string(s.id)] = &s;

  MetricReport rep;
  std::vector<PredictionRecord> preds;
  std::vector<GroundTruthLabel> labels;
  std::vector<std::vector<int>> histories;
  std::vector<int> label_grades, final_grades;
  std::vector<BinaryMask> masks;
  std::vector<const FundusSample*> seg_samples;
  for (const auto& rec : results.at("images")) {
    ++rep.images;
    if (rec.contains("error")) {
      ++rep.failed;
      continue;
    }
    const std::string id = rec.at("id");
    auto it = by_id.find(id);
    if (it == by_id.end()) throw InvalidInput("results.json names image " + id + " not in the test split");
    const FundusSample& s = *it->second;
    const PredictionRecord p = detail::prediction_from_json(rec.at("initial"));
    preds.push_back(p);
    GroundTruthLabel l;
    l.grade = s.grade;
    for (int k = 0; k < kNumLesions; ++k) l.lesions[k] = s.lesion_flags[k];
    labels.push_back(l);
    histories.push_back(rec.at("class_history").get<std::vector<int>>());
    label_grades.push_back(s.grade);
    final_grades.push_back(rec.at("final_class"));
    const int T = rec.at("T");
    if (static_cast<int>(rep.iterations_histogram.size()) <= T) rep.iterations_histogram.resize(T + 1, 0);
    rep.iterations_histogram[T]++;
    if (classify_referable(p.predicted_grade)) {
      const fs::path mp = detail::trace_dir(c, s.id) / "accumulated_mask.png";
      if (!fs::exists(mp)) throw MissingArtifact(mp.string());
      masks.push_back(image_to_mask(read_png(mp, 1)));
      seg_samples.push_back(&s);
    }
  }
  if (preds.empty()) throw InvalidInput("no successful loop results to evaluate");
  rep.classification = classification_metrics(preds, labels);
  rep.segmentation = seg_scores(masks, seg_samples);
  rep.reduction = reduction_curve(histories);
  rep.transitions = transition_flow(label_grades, final_grades);
  return rep;
}

inline ojson cmd_evaluate(const RunConfig& c) {
  const MetricReport rep = evaluate_run(c);
  const fs::path dir = c.eval_path();
  fs::create_directories(dir);
  write_effective_config(dir, c);
  write_report_json(dir / "report.json", rep);
  write_metrics_csv(dir / "metrics.csv", rep);
  ojson out = {{"command", "evaluate"}, {"metrics", (dir / "metrics.csv").string()}};
  out["reduction_rate"] = rep.reduction.rate.empty() ? ojson(nullptr) : ojson(rep.reduction.rate.back());
  out["lesion_sensitivity"] = optional_json(rep.segmentation.lesion_union.sensitivity);
  out["kappa"] = rep.classification.kappa;
  return out;
}

/// Reduction curve, transition heat map, and per-image montages with one row
/// per cycle: input | saliency | mask contour | repaired output.
inline ojson cmd_report(const RunConfig& c) {
  const auto report = detail::read_json(c.eval_path() / "report.json");
  const auto results = detail::read_json(c.run_path() / "results.json");
  const fs::path dir = c.report_path();
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_effective_config(dir, c);

  write_png(dir / "reduction_curve.png", plot::line_chart(report.at("reduction").at("rate").get<std::vector<double>>()));
  write_png(dir / "transition_flow.png", plot::heat_map(report.at("transitions").get<Confusion>()));

  const auto test = read_dataset(c.data_path() / "test");
  std::map<std::string, const FundusSample*> by_id;
  for (const auto& s : test) by_id[sample_id_string(s.id)] = &s;
  int written = 0;
  constexpr int kZoom = 4;
  for (const auto& rec : results.at("images")) {
    if (written >= c.montage_images) break;
    if (rec.contains("error") || rec.at("T").get<int>() < 1) continue;
    const std::string id = rec.at("id");
    const fs::path tdir = c.run_path() / "traces" / id;
    auto it = by_id.find(id);
    if (it == by_id.end()) continue;
    Image input = it->second->image;
    std::vector<Image> tiles;
    for (int t = 1; t <= rec.at("T").get<int>(); ++t) {
      const std::string stem = "iter_" + std::to_string(t) + "_";
      const Image sal = read_png(tdir / (stem + "saliency.png"), 1);
      const BinaryMask mask = image_to_mask(read_png(tdir / (stem + "mask.png"), 1));
      const Image repaired = read_png(tdir / (stem + "repaired.png"), 3);
      tiles.push_back(plot::upscale(input, kZoom));
      tiles.push_back(plot::upscale(sal, kZoom));
      tiles.push_back(plot::upscale(plot::contour_overlay(input, mask), kZoom));
      tiles.push_back(plot::upscale(repaired, kZoom));
      input = repaired;
    }
    write_png(dir / ("montage_" + id + ".png"), plot::grid(tiles, 4));
    ++written;
  }
  return {{"command", "report"}, {"report_dir", dir.string()}, {"montages", written}};
}

}  // namespace twlr
