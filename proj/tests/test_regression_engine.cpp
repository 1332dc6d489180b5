#include <gtest/gtest.h>

#include "support.hpp"
#include "twlr/regression_engine.hpp"

using namespace twlr;

namespace {

Image blank() { return fixtures::flat_image(64, 64, 90, 40, 20); }

class FlatGrader : public Grader {
 public:
  PredictionRecord grade(const Image&) const override { return fixtures::grade_record(4); }
  SaliencyMap saliency(const Image& img, int) const override {
    SaliencyMap s;
    s.values = FloatMap(img.width, img.height, 0.25);
    return s;
  }
};

class ThrowingInpainter : public Inpainter {
 public:
  using Inpainter::inpaint;
  Image inpaint(const InpaintRequest&) const override { throw DegenerateMaskError("stub"); }
};

// Fails on images whose top-left pixel has green == 77.
class PoisonInpainter : public Inpainter {
 public:
  using Inpainter::inpaint;
  Image inpaint(const InpaintRequest& r) const override {
    if (r.image.at(0, 0, 1) == 77) throw std::runtime_error("poisoned image");
    return HarmonicInpainter().inpaint(r);
  }
};

FundusSample marked_sample(int id, int markers, std::uint8_t corner_green = 0) {
  FundusSample s;
  s.id = id;
  s.grade = markers ? 3 : 0;
  s.image = blank();
  s.image.at(0, 0, 1) = corner_green;
  for (int i = 0; i < markers; ++i) s.image.at(10 + 7 * i, 20 + 3 * i, 0) = 255;
  s.vessel_mask = BinaryMask(64, 64);
  s.field_mask = BinaryMask(64, 64, 1);
  s.disc_mask = BinaryMask(64, 64);
  for (auto& m : s.lesion_masks) m = BinaryMask(64, 64);
  return s;
}

}  // namespace

TEST(Referable, Membership) {
  EXPECT_FALSE(classify_referable(0));
  EXPECT_FALSE(classify_referable(1));
  EXPECT_TRUE(classify_referable(2));
  EXPECT_TRUE(classify_referable(3));
  EXPECT_TRUE(classify_referable(4));
  EXPECT_THROW(classify_referable(5), InvalidInput);
}

TEST(Loop, HealthyEntryRunsNoCycles) {
  fixtures::ScriptedGrader g({0});
  const Image img = blank();
  const auto r = run_loop(img, g, HarmonicInpainter(), Image(), LoopParams{});
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(r.reason, Termination::NonReferable);
  EXPECT_EQ(r.final_image, img);
  EXPECT_TRUE(r.accumulated_mask.empty());
  EXPECT_TRUE(r.traces.empty());
}

TEST(Loop, FlipAfterOneCycle) {
  fixtures::ScriptedGrader g({2, 1});
  const auto r = run_loop(blank(), g, HarmonicInpainter(), Image(), LoopParams{});
  EXPECT_EQ(r.iterations, 1);
  EXPECT_EQ(r.reason, Termination::NonReferable);
  ASSERT_EQ(r.traces.size(), 1u);
  EXPECT_EQ(r.accumulated_mask, r.traces[0].binary_mask);
  EXPECT_EQ(r.traces[0].iteration, 1);
  EXPECT_EQ(r.traces[0].prediction.predicted_grade, 2);
  EXPECT_EQ(r.final_prediction.predicted_grade, 1);
  EXPECT_EQ(r.class_history(), (std::vector<int>{2, 1}));
}

TEST(Loop, MasksAccumulateMonotonically) {
  fixtures::ScriptedGrader g({4, 4, 3, 3, 2, 0});
  const auto r = run_loop(blank(), g, HarmonicInpainter(), Image(), LoopParams{});
  ASSERT_EQ(r.iterations, 5);
  BinaryMask uni(64, 64);
  for (std::size_t t = 0; t < r.traces.size(); ++t) {
    uni = mask_union(uni, r.traces[t].binary_mask);
    EXPECT_EQ(r.traces[t].accumulated_mask, uni);
    if (t > 0) EXPECT_TRUE(mask_subset(r.traces[t - 1].accumulated_mask, r.traces[t].accumulated_mask));
  }
  EXPECT_EQ(r.accumulated_mask, uni);
}

TEST(Loop, NeverFlippingStopsAtCap) {
  fixtures::ScriptedGrader g({3});
  LoopParams p;
  p.max_iterations = 4;
  const auto r = run_loop(blank(), g, HarmonicInpainter(), Image(), p);
  EXPECT_EQ(r.iterations, 4);
  EXPECT_EQ(r.reason, Termination::MaxIterations);
  EXPECT_FALSE(r.no_progress);
  EXPECT_EQ(g.calls(), 5u);
  p.max_iterations = 0;
  EXPECT_THROW(run_loop(blank(), g, HarmonicInpainter(), Image(), p), InvalidInput);
}

TEST(Loop, FlatSaliencyIsNoProgress) {
  const auto r = run_loop(blank(), FlatGrader(), HarmonicInpainter(), Image(), LoopParams{});
  EXPECT_EQ(r.iterations, 0);
  EXPECT_EQ(r.reason, Termination::MaxIterations);
  EXPECT_TRUE(r.no_progress);
}

TEST(Loop, DegenerateInpaintStops) {
  fixtures::ScriptedGrader g({3});
  const auto r = run_loop(blank(), g, ThrowingInpainter(), Image(), LoopParams{});
  EXPECT_EQ(r.reason, Termination::InpaintDegenerate);
  EXPECT_EQ(r.iterations, 0);
}

TEST(Loop, FaultsCarryIteration) {
  class Flaky : public fixtures::ScriptedGrader {
   public:
    Flaky() : ScriptedGrader({3}) {}
    PredictionRecord grade(const Image& img) const override {
      if (calls() == 2) throw std::runtime_error("model fault");
      return ScriptedGrader::grade(img);
    }
  } g;
  try {
    run_loop(blank(), g, HarmonicInpainter(), Image(), LoopParams{});
    FAIL();
  } catch (const LoopError& e) {
    EXPECT_EQ(e.iteration(), 2);
  }
}

TEST(Loop, DilationGrowsMask) {
  fixtures::ScriptedGrader a({3, 0}), b({3, 0});
  LoopParams p;
  const auto plain = run_loop(blank(), a, HarmonicInpainter(), Image(), p);
  p.dilate_mask = true;
  const auto grown = run_loop(blank(), b, HarmonicInpainter(), Image(), p);
  EXPECT_TRUE(grown.traces[0].dilated);
  EXPECT_TRUE(mask_subset(plain.accumulated_mask, grown.accumulated_mask));
  EXPECT_GT(grown.accumulated_mask.pixel_count(), plain.accumulated_mask.pixel_count());
}

TEST(Loop, RepairRunsOnVesselImages) {
  SynthConfig cfg;
  const auto s = generate_sample(cfg, 3, 0);
  fixtures::ScriptedGrader g({3, 3, 0});
  const auto r = run_loop(s, g, HarmonicInpainter(), GroundTruthVessels(), LoopParams{});
  ASSERT_EQ(r.iterations, 2);
  for (const auto& t : r.traces) {
    EXPECT_FALSE(t.repair_skipped);
    EXPECT_NE(t.repaired, t.inpainted);
  }
}

TEST(Loop, MarkerStubReachesHealthyAndStaysThere) {
  const auto s = marked_sample(0, 3);
  const fixtures::MarkerGrader g;
  const auto r = run_loop(s, g, HarmonicInpainter(), GroundTruthVessels(), LoopParams{});
  EXPECT_EQ(r.reason, Termination::NonReferable);
  EXPECT_EQ(r.iterations, 1);
  EXPECT_FALSE(classify_referable(g.grade(r.final_image).predicted_grade));
}

TEST(Batch, EmptyDataset) {
  EXPECT_TRUE(run_batch({}, fixtures::MarkerGrader(), HarmonicInpainter(), GroundTruthVessels(), LoopParams{}).empty());
}

TEST(Batch, FailureIsIsolated) {
  const std::vector<FundusSample> ds{marked_sample(0, 2, 77), marked_sample(1, 2)};
  for (int workers : {1, 2}) {
    const auto items = run_batch(ds, fixtures::MarkerGrader(), PoisonInpainter(), GroundTruthVessels(), LoopParams{}, workers);
    ASSERT_EQ(items.size(), 2u);
    EXPECT_FALSE(items[0].result.has_value());
    EXPECT_NE(items[0].error.find("poisoned"), std::string::npos);
    ASSERT_TRUE(items[1].result.has_value());
    EXPECT_TRUE(items[1].error.empty());
    EXPECT_EQ(items[1].id, 1);
    EXPECT_EQ(items[1].result->reason, Termination::NonReferable);
  }
}

TEST(Batch, SerialMatchesParallel) {
  SynthConfig cfg;
  const auto ds = generate_dataset(cfg, {0, 0, 2, 2, 2});
  EncoderConfig ec;
  auto params = init_encoder(ec, 6);
  const VisionLanguageModel model(params, encode_text(default_descriptions(64)));
  LoopParams p;
  p.max_iterations = 3;
  p.seed = 17;
  const auto serial = run_batch(ds, model, HarmonicInpainter(), GroundTruthVessels(), p, 1);
  const auto parallel = run_batch(ds, model, HarmonicInpainter(), GroundTruthVessels(), p, 4);
  ASSERT_EQ(serial.size(), parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    ASSERT_TRUE(serial[i].result && parallel[i].result);
    EXPECT_EQ(serial[i].id, parallel[i].id);
    EXPECT_EQ(serial[i].result->final_image, parallel[i].result->final_image);
    EXPECT_EQ(serial[i].result->accumulated_mask, parallel[i].result->accumulated_mask);
    EXPECT_EQ(serial[i].result->class_history(), parallel[i].result->class_history());
  }
}
