#include <gtest/gtest.h>

#include "support.hpp"
#include "twlr/saliency.hpp"

using namespace twlr;

namespace {

// Four 16×16 patches, D = 4, one head, feed-forward switched off. Patch
// embeddings carry the mean red intensity in dim 0 and mean green in dim 1.
// The cls query selects keys with a large dim-0 component, so the cls token
// reads almost only from the reddest patch, the one aligned with text row 0.
EncoderParams toy_attention_model() {
  EncoderConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 16;
  cfg.dim = 4;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.ffn_dim = 1;
  cfg.temperature = 1.0;
  EncoderParams p = init_encoder(cfg, 0);
  p.projection.setZero();
  const int px = 16 * 16;
  for (int i = 0; i < px; ++i) {
    p.projection(i * 3 + 0, 0) = 1.0 / px;
    p.projection(i * 3 + 1, 1) = 1.0 / px;
  }
  p.positional.setZero();
  p.cls_token = Mat::Zero(1, 4);
  p.cls_token(0, 3) = 1.0;
  auto& L = p.layers[0];
  L.wq.setZero();
  L.wq(3, 0) = 5.0;
  L.wk.setZero();
  L.wk(0, 0) = 1.0;
  L.wv = Mat::Identity(4, 4);
  L.wo = Mat::Identity(4, 4);
  L.w1.setZero();
  L.w2.setZero();
  return p;
}

Image two_tone(int red_patch, int green_patch) {
  Image img(32, 32);
  auto paint = [&](int patch, int channel) {
    const int ox = (patch % 2) * 16, oy = (patch / 2) * 16;
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) img.at(ox + x, oy + y, channel) = 255;
  };
  paint(red_patch, 0);
  paint(green_patch, 1);
  return img;
}

double patch_mass(const SaliencyMap& s, int patch) {
  const int ox = (patch % 2) * 16, oy = (patch / 2) * 16;
  double m = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) m += s.values.at(ox + x, oy + y);
  return m;
}

SaliencyMap map_from(int w, int h, std::vector<double> v) {
  SaliencyMap s;
  s.values = FloatMap(w, h);
  s.values.data = std::move(v);
  return s;
}

}  // namespace

TEST(GuidedBackprop, ZeroProjectionGivesZeroMap) {
  auto p = init_encoder(EncoderConfig{}, 4);
  p.projection.setZero();
  Rng rng(2);
  const auto text = encode_text(default_descriptions(64)).concatenated();
  const auto s = guided_backprop(fixtures::random_image(rng, 64, 64), p, text, 3);
  for (double v : s.values.data) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(binarize(s).empty());
}

TEST(GuidedBackprop, NonNegativeFiniteAndSized) {
  const auto p = init_encoder(EncoderConfig{}, 4);
  const auto text = encode_text(default_descriptions(64)).concatenated();
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto s = guided_backprop(fixtures::random_image(rng, 64, 64), p, text, trial);
    ASSERT_EQ(s.values.width, 64);
    ASSERT_EQ(s.values.height, 64);
    EXPECT_EQ(s.source_class, trial);
    double total = 0;
    for (double v : s.values.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_TRUE(std::isfinite(v));
      total += v;
    }
    EXPECT_GT(total, 0.0);
  }
}

TEST(GuidedBackprop, ConcentratesOnAlignedPatch) {
  const auto p = toy_attention_model();
  Mat text = Mat::Zero(9, 4);
  text(0, 0) = 1.0;
  for (int r = 1; r < 9; ++r) text(r, 1 + r % 3) = 1.0;
  for (auto [red, green] : {std::pair{0, 3}, {2, 1}, {3, 0}}) {
    const auto s = guided_backprop(two_tone(red, green), p, text, 0);
    double total = 0;
    for (int k = 0; k < 4; ++k) total += patch_mass(s, k);
    ASSERT_GT(total, 0.0);
    EXPECT_GE(patch_mass(s, red) / total, 0.6) << "red patch " << red;
  }
}

TEST(GuidedBackprop, RejectsBadTarget) {
  const auto p = init_encoder(EncoderConfig{}, 4);
  const auto text = encode_text(default_descriptions(64)).concatenated();
  EXPECT_THROW(guided_backprop(Image(64, 64), p, text, 5), InvalidInput);
  EXPECT_THROW(guided_backprop(Image(64, 64), p, Mat::Zero(9, 8), 0), InvalidInput);
}

TEST(Binarize, ConstantMapIsEmpty) {
  for (double c : {0.0, 0.1, 3.7, 1e6}) EXPECT_TRUE(binarize(map_from(7, 9, std::vector<double>(63, c))).empty());
}

TEST(Binarize, SingleHotPixel) {
  std::vector<double> v(100, 0.0);
  v[37] = 1.0;
  const auto m = binarize(map_from(10, 10, v));
  EXPECT_EQ(m.pixel_count(), 1u);
  EXPECT_EQ(m.data[37], 1);
  // μ = 0.01, σ = sqrt(0.0099): a value just above the threshold is set.
  const double threshold = 0.01 + std::sqrt(0.0099);
  EXPECT_NEAR(threshold, 0.1095, 1e-4);
}

TEST(Binarize, ThresholdIsPerMap) {
  // The same value lands on opposite sides of the threshold in two maps.
  const auto a = binarize(map_from(2, 2, {0.0, 0.0, 0.0, 0.5}));
  const auto b = binarize(map_from(2, 2, {0.5, 0.9, 0.9, 0.9}));
  EXPECT_EQ(a.data[3], 1);
  EXPECT_EQ(b.data[0], 0);
}

TEST(Binarize, ScaleInvariantAndInsideSupport) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(256);
    for (double& x : v) x = rng.uniform() < 0.3 ? 0.0 : rng.uniform();
    const auto base = binarize(map_from(16, 16, v));
    for (double k : {0.5, 3.0, 1024.0}) {
      // Powers of two keep the scaled statistics exact; 3.0 may not.
      std::vector<double> w = v;
      for (double& x : w) x *= k;
      if (k != 3.0) {
        EXPECT_EQ(binarize(map_from(16, 16, w)).data, base.data);
      } else {
        const auto scaled = binarize(map_from(16, 16, w));
        std::size_t diff = 0;
        for (std::size_t i = 0; i < 256; ++i) diff += scaled.data[i] != base.data[i];
        EXPECT_LE(diff, 1u);
      }
    }
    for (std::size_t i = 0; i < v.size(); ++i)
      if (base.data[i]) EXPECT_GT(v[i], 0.0);
  }
}
