#include <gtest/gtest.h>

#include <fstream>

#include "oracles.hpp"
#include "support.hpp"
#include "twlr/evaluation.hpp"

using namespace twlr;

namespace {

BinaryMask block(int w, int h, int x0, int y0, int bw, int bh) {
  BinaryMask m(w, h);
  for (int y = y0; y < y0 + bh; ++y)
    for (int x = x0; x < x0 + bw; ++x) m.at(x, y) = 1;
  return m;
}

Confusion confusion_of(const std::vector<int>& truth, const std::vector<int>& pred) {
  Confusion m{};
  for (std::size_t i = 0; i < truth.size(); ++i) m[truth[i]][pred[i]]++;
  return m;
}

}  // namespace

TEST(SegMetrics, Examples) {
  const auto a = block(6, 6, 1, 1, 3, 2);
  auto r = seg_metrics(a, a);
  EXPECT_EQ(*r.sensitivity, 100.0);
  EXPECT_EQ(r.iou, 100.0);
  EXPECT_EQ(r.dice, 100.0);

  r = seg_metrics(block(6, 6, 0, 0, 2, 2), block(6, 6, 4, 4, 2, 2));
  EXPECT_EQ(*r.sensitivity, 0.0);
  EXPECT_EQ(r.iou, 0.0);
  EXPECT_EQ(r.dice, 0.0);

  r = seg_metrics(block(6, 6, 0, 0, 2, 2), block(6, 6, 1, 0, 2, 2));
  EXPECT_DOUBLE_EQ(*r.sensitivity, 50.0);
  EXPECT_NEAR(r.iou, 100.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(r.dice, 50.0);
}

TEST(SegMetrics, EmptyGroundTruthConvention) {
  auto r = seg_metrics(BinaryMask(4, 4), BinaryMask(4, 4));
  EXPECT_FALSE(r.sensitivity);
  EXPECT_EQ(r.iou, 100.0);
  r = seg_metrics(block(4, 4, 0, 0, 1, 1), BinaryMask(4, 4));
  EXPECT_FALSE(r.sensitivity);
  EXPECT_EQ(r.dice, 0.0);
}

TEST(SegMetrics, OracleAndDiceIouIdentity) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const int w = rng.uniform_int(1, 9), h = rng.uniform_int(1, 9);
    const auto p = fixtures::random_mask(rng, w, h, rng.uniform());
    const auto g = fixtures::random_mask(rng, w, h, rng.uniform());
    const auto r = seg_metrics(p, g);
    const auto o = oracle::seg(p, g);
    ASSERT_EQ(r.sensitivity.has_value(), o.has_sensitivity);
    if (o.has_sensitivity) EXPECT_NEAR(*r.sensitivity, o.sensitivity, 1e-9);
    EXPECT_NEAR(r.iou, o.iou, 1e-9);
    EXPECT_NEAR(r.dice, o.dice, 1e-9);
    const double iou = r.iou / 100.0;
    EXPECT_NEAR(r.dice / 100.0, 2 * iou / (1 + iou), 1e-12);
    EXPECT_GE(r.dice, r.iou);
  }
}

TEST(SegScores, PerClassCoverageAndBackground) {
  FundusSample s;
  s.image = Image(8, 8);
  for (auto& m : s.lesion_masks) m = BinaryMask(8, 8);
  s.lesion_masks[0] = block(8, 8, 0, 0, 2, 2);  // MA, 4 px
  s.lesion_masks[3] = block(8, 8, 4, 4, 4, 4);  // EX, 16 px
  const BinaryMask pred = mask_union(block(8, 8, 0, 0, 1, 2), block(8, 8, 4, 4, 4, 4));
  const auto sc = seg_scores({pred}, {&s});
  EXPECT_DOUBLE_EQ(*sc.classes[1].pooled_metrics.sensitivity, 50.0);
  EXPECT_DOUBLE_EQ(*sc.classes[4].pooled_metrics.sensitivity, 100.0);
  EXPECT_FALSE(sc.classes[2].pooled_metrics.sensitivity);
  EXPECT_EQ(sc.classes[2].images_skipped, 1);
  // Background: 44 px, all outside the prediction.
  EXPECT_DOUBLE_EQ(*sc.classes[0].pooled_metrics.sensitivity, 100.0);
  EXPECT_DOUBLE_EQ(sc.sensitivity_wo_bg, 75.0);
  EXPECT_NEAR(*sc.lesion_union.sensitivity, 100.0 * 18 / 20, 1e-12);
}

TEST(Kappa, Examples) {
  const std::vector<int> t{0, 1, 2, 3, 4, 2, 1, 0};
  EXPECT_DOUBLE_EQ(quadratic_weighted_kappa(confusion_of(t, t)), 1.0);

  std::vector<int> uniform, zeros;
  for (int g = 0; g < 5; ++g)
    for (int i = 0; i < 4; ++i) {
      uniform.push_back(g);
      zeros.push_back(0);
    }
  EXPECT_NEAR(quadratic_weighted_kappa(confusion_of(uniform, zeros)), 0.0, 1e-12);

  const std::vector<int> a{0, 1, 2, 4}, b{0, 2, 2, 3};
  EXPECT_NEAR(quadratic_weighted_kappa(confusion_of(a, b)), oracle::kappa(a, b), 1e-12);
  EXPECT_THROW(quadratic_weighted_kappa(Confusion{}), InvalidInput);
}

TEST(Kappa, OracleAndBounds) {
  Rng rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = rng.uniform_int(1, 40);
    std::vector<int> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = rng.uniform_int(0, 4);
      b[i] = rng.uniform() < 0.5 ? a[i] : rng.uniform_int(0, 4);
    }
    const double k = quadratic_weighted_kappa(confusion_of(a, b));
    EXPECT_NEAR(k, oracle::kappa(a, b), 1e-9);
    EXPECT_GE(k, -1.0 - 1e-12);
    EXPECT_LE(k, 1.0 + 1e-12);
  }
}

TEST(Auc, RankStatistic) {
  EXPECT_DOUBLE_EQ(*rank_auc({0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0}), 0.5);
  EXPECT_DOUBLE_EQ(*rank_auc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(*rank_auc({0.9, 0.2, 0.8, 0.1}, {0, 0, 1, 1}), 0.25);
  EXPECT_FALSE(rank_auc({0.1, 0.2}, {1, 1}));

  // Brute-force pair counting.
  Rng rng(2);
  std::vector<double> s(30);
  std::vector<int> y(30);
  for (int i = 0; i < 30; ++i) {
    s[i] = rng.uniform_int(0, 5) / 5.0;
    y[i] = rng.uniform() < 0.4;
  }
  y[0] = 1;
  y[1] = 0;
  double wins = 0, pairs = 0;
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 30; ++j)
      if (y[i] && !y[j]) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  EXPECT_NEAR(*rank_auc(s, y), wins / pairs, 1e-12);
}

TEST(Classification, PerfectPredictions) {
  std::vector<PredictionRecord> preds;
  std::vector<GroundTruthLabel> labels;
  for (int g = 0; g < 5; ++g)
    for (int i = 0; i < 3; ++i) {
      GroundTruthLabel l{g, {g >= 1, g >= 2, g >= 3, g >= 2}};
      ClassVector s{};
      s[g] = 1.0;
      for (int k = 0; k < 4; ++k) s[5 + k] = l.lesions[k] ? 1.0 : -1.0;
      preds.push_back(predict(s, 10.0));
      labels.push_back(l);
    }
  const auto m = classification_metrics(preds, labels);
  EXPECT_DOUBLE_EQ(m.accuracy, 100.0);
  EXPECT_DOUBLE_EQ(*m.f1, 100.0);
  EXPECT_DOUBLE_EQ(m.kappa, 1.0);
  EXPECT_DOUBLE_EQ(*m.auc, 1.0);
  EXPECT_TRUE(m.skipped.empty());
}

TEST(Classification, ConstantScorerAndSkippedClasses) {
  std::vector<PredictionRecord> preds;
  std::vector<GroundTruthLabel> labels;
  for (int i = 0; i < 8; ++i) {
    preds.push_back(predict(ClassVector{}, 1.0));  // every class scored equally
    labels.push_back({i % 2 ? 2 : 0, {i % 2, 0, 0, 0}});
  }
  const auto m = classification_metrics(preds, labels);
  EXPECT_DOUBLE_EQ(*m.auc_grade, 0.5);
  EXPECT_DOUBLE_EQ(*m.auc_lesion, 0.5);
  EXPECT_NEAR(m.kappa, 0.0, 1e-12);
  const std::vector<std::string> skipped{"grade1", "grade3", "grade4", "HE", "SE", "EX"};
  EXPECT_EQ(m.skipped, skipped);
  EXPECT_THROW(classification_metrics({}, {}), InvalidInput);
}

TEST(Reduction, Examples) {
  EXPECT_FALSE(reduction_curve({{0}, {1}}).defined());
  EXPECT_TRUE(reduction_curve({}).rate.empty());

  auto c = reduction_curve({{3, 0}, {2, 1}, {4, 1}});
  EXPECT_EQ(c.rate, (std::vector<double>{1.0}));

  c = reduction_curve({{3, 1}, {2, 0}, {4, 3, 1}, {2, 2, 0}, {0}});
  EXPECT_EQ(c.initially_referable, 4);
  EXPECT_EQ(c.rate, (std::vector<double>{0.5, 1.0}));

  c = reduction_curve({{3, 3, 3}, {2, 1}});
  EXPECT_EQ(c.rate, (std::vector<double>{0.5, 0.5}));
}

TEST(Reduction, MonotoneOnRandomHistories) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<int>> hs(20);
    for (auto& h : hs) {
      const int len = rng.uniform_int(1, 8);
      for (int t = 0; t < len; ++t) h.push_back(rng.uniform_int(0, 4));
    }
    const auto c = reduction_curve(hs);
    for (std::size_t t = 1; t < c.rate.size(); ++t) EXPECT_GE(c.rate[t], c.rate[t - 1]);
    for (double r : c.rate) {
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, 1.0);
    }
  }
}

TEST(Transitions, Examples) {
  auto f = transition_flow({2, 2, 2}, {0, 0, 0});
  EXPECT_EQ(f[2][0], 3);
  EXPECT_EQ(transition_flow({}, {}), TransitionFlow{});

  f = transition_flow({0, 4, 4, 3, 2, 4}, {0, 1, 0, 1, 1, 4});
  TransitionFlow hand{};
  hand[0][0] = 1;
  hand[4][1] = 1;
  hand[4][0] = 1;
  hand[3][1] = 1;
  hand[2][1] = 1;
  hand[4][4] = 1;
  EXPECT_EQ(f, hand);
  std::int64_t row4 = 0;
  for (auto v : f[4]) row4 += v;
  EXPECT_EQ(row4, 3);
  EXPECT_THROW(transition_flow({1}, {}), InvalidInput);
}

TEST(Report, CsvAndJson) {
  fixtures::TempDir tmp("report");
  MetricReport r;
  r.reduction = reduction_curve({{3, 1}, {2, 2, 0}});
  r.transitions = transition_flow({3, 2}, {1, 0});
  r.images = 2;
  write_report_json(tmp.path / "report.json", r);
  write_metrics_csv(tmp.path / "metrics.csv", r);
  const auto j = nlohmann::json::parse(std::ifstream(tmp.path / "report.json"));
  EXPECT_EQ(j.at("reduction").at("rate").size(), 2u);
  std::ifstream csv(tmp.path / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "metric,class,value");
}
