#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"
#include "twlr/morphology.hpp"
#include "twlr/synthgen.hpp"

using namespace twlr;

namespace {

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Synthgen, GradeZeroHasNoLesions) {
  SynthConfig cfg;
  for (int i = 0; i < 10; ++i) {
    const auto s = generate_sample(cfg, 0, i);
    for (int k = 0; k < kNumLesions; ++k) {
      EXPECT_TRUE(s.lesion_masks[k].empty());
      EXPECT_EQ(s.lesion_flags[k], 0);
    }
  }
}

TEST(Synthgen, GradeFourBudgetRendersEveryType) {
  SynthConfig cfg;
  ASSERT_EQ(cfg.lesion_budget[4][0].min, 5);
  ASSERT_EQ(cfg.lesion_budget[4][0].max, 8);
  ASSERT_EQ(cfg.lesion_budget[4][1].min, 4);
  ASSERT_EQ(cfg.lesion_budget[4][1].max, 6);
  ASSERT_EQ(cfg.lesion_budget[4][2].min, 2);
  ASSERT_EQ(cfg.lesion_budget[4][2].max, 3);
  ASSERT_EQ(cfg.lesion_budget[4][3].min, 4);
  ASSERT_EQ(cfg.lesion_budget[4][3].max, 6);
  for (int i = 0; i < 10; ++i) {
    const auto s = generate_sample(cfg, 4, i);
    for (int k = 0; k < kNumLesions; ++k) EXPECT_EQ(s.lesion_flags[k], 1) << kLesionNames[k];
  }
}

// Distinct lesions keep a one-pixel gap, so 8-connected components never
// merge two lesions. Single-disc types (MA, SE) are exactly one component
// each; clustered types (HE, EX) may split into several.
TEST(Synthgen, RenderedComponentsMatchBudget) {
  SynthConfig cfg;
  for (int g = 0; g < kNumGrades; ++g)
    for (int i = 0; i < 8; ++i) {
      const auto s = generate_sample(cfg, g, i);
      for (int k = 0; k < kNumLesions; ++k) {
        const auto& r = cfg.lesion_budget[g][k];
        const int placed = s.lesion_counts[k];
        EXPECT_GE(placed, r.min);
        EXPECT_LE(placed, r.max);
        const int comps = static_cast<int>(connected_components(s.lesion_masks[k]).size());
        if (k == static_cast<int>(Lesion::MA) || k == static_cast<int>(Lesion::SE))
          EXPECT_EQ(comps, placed) << "grade " << g << " " << kLesionNames[k];
        else
          EXPECT_GE(comps, placed) << "grade " << g << " " << kLesionNames[k];
      }
    }
}

TEST(Synthgen, GradeTwoLesionFractionIsSparse) {
  SynthConfig cfg;
  for (int i = 0; i < 30; ++i) {
    const auto s = generate_sample(cfg, 2, i);
    const double frac = static_cast<double>(s.lesion_union().pixel_count()) / (64.0 * 64.0);
    EXPECT_LE(frac, 0.04) << "sample " << i;
  }
}

TEST(Synthgen, LabelsMatchMasks) {
  SynthConfig cfg;
  for (int g = 0; g < kNumGrades; ++g)
    for (int i = 0; i < 6; ++i) {
      const auto s = generate_sample(cfg, g, i);
      for (int k = 0; k < kNumLesions; ++k) EXPECT_EQ(s.lesion_flags[k], s.lesion_masks[k].empty() ? 0 : 1);
    }
}

TEST(Synthgen, MasksStayInFieldAndOffDisc) {
  SynthConfig cfg;
  for (int g = 1; g < kNumGrades; ++g)
    for (int i = 0; i < 6; ++i) {
      const auto s = generate_sample(cfg, g, i);
      for (int k = 0; k < kNumLesions; ++k) {
        EXPECT_TRUE(mask_subset(s.lesion_masks[k], s.field_mask));
        EXPECT_TRUE(mask_intersection(s.lesion_masks[k], s.disc_mask).empty());
      }
      EXPECT_TRUE(mask_subset(s.vessel_mask, s.field_mask));
    }
}

TEST(Synthgen, BurdenIsMonotoneInGrade) {
  SynthConfig cfg;
  double prev = -1;
  for (int g = 0; g < kNumGrades; ++g) {
    double total = 0;
    for (int i = 0; i < 30; ++i) total += static_cast<double>(generate_sample(cfg, g, i).lesion_union().pixel_count());
    const double mean = total / 30;
    EXPECT_GE(mean, prev) << "grade " << g;
    prev = mean;
  }
}

TEST(Synthgen, LesionAppearance) {
  SynthConfig cfg;
  const auto s = generate_sample(cfg, 4, 0);
  // MA dots are small: each component fits in a 7×7 box (radius ≤ 3).
  for (const auto& c : connected_components(s.lesion_masks[0])) EXPECT_LE(c.extent(), 7);
  auto mean_rgb = [&](const BinaryMask& m) {
    std::array<double, 3> acc{};
    double n = 0;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x)
        if (m.at(x, y)) {
          ++n;
          for (int c = 0; c < 3; ++c) acc[c] += s.image.at(x, y, c);
        }
    for (auto& v : acc) v /= n;
    return acc;
  };
  const auto ma = mean_rgb(s.lesion_masks[0]);
  const auto ex = mean_rgb(s.lesion_masks[3]);
  EXPECT_GT(ma[0], ma[1] + 40);  // dark red
  EXPECT_LT(ma[0], 130);
  EXPECT_GT(ex[0], 200);  // bright yellow
  EXPECT_GT(ex[1], 180);
  EXPECT_LT(ex[2], ex[1] - 60);
}

TEST(Synthgen, InvalidGradeRejected) {
  SynthConfig cfg;
  EXPECT_THROW(generate_sample(cfg, 5), InvalidInput);
  EXPECT_THROW(generate_sample(cfg, -1), InvalidInput);
}

TEST(Synthgen, ConfigInvariants) {
  SynthConfig cfg;
  cfg.image_size = 48;
  EXPECT_THROW(cfg.validate(16), InvalidInput);
  cfg.image_size = 72;
  EXPECT_THROW(cfg.validate(16), InvalidInput);
  cfg.image_size = 64;
  cfg.lesion_budget[2][1] = {3, 1};
  EXPECT_THROW(cfg.validate(16), InvalidInput);
}

TEST(Synthgen, SameCallSameBytes) {
  SynthConfig cfg;
  cfg.seed = 99;
  const auto a = generate_sample(cfg, 3, 7);
  const auto b = generate_sample(cfg, 3, 7);
  EXPECT_EQ(a.image, b.image);
  for (int k = 0; k < kNumLesions; ++k) EXPECT_EQ(a.lesion_masks[k].data, b.lesion_masks[k].data);
  cfg.seed = 100;
  EXPECT_FALSE(generate_sample(cfg, 3, 7).image == a.image);
}

TEST(Synthgen, DatasetCountsAndOrder) {
  SynthConfig cfg;
  const auto two = generate_dataset(cfg, {2, 0, 0, 0, 0});
  ASSERT_EQ(two.size(), 2u);
  for (const auto& s : two) EXPECT_EQ(s.grade, 0);
  const auto fifty = generate_dataset(cfg, {10, 10, 10, 10, 10});
  ASSERT_EQ(fifty.size(), 50u);
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(fifty[i].grade, i / 10);
    EXPECT_EQ(fifty[i].id, i);
  }
  EXPECT_THROW(generate_dataset(cfg, {1, -1, 0, 0, 0}), InvalidInput);
}

TEST(Synthgen, DatasetWrittenTwiceIsByteIdentical) {
  fixtures::TempDir tmp("synth_hash");
  SynthConfig cfg;
  cfg.seed = 5;
  write_dataset(tmp.path / "a", generate_dataset(cfg, {5, 5, 5, 5, 5}));
  write_dataset(tmp.path / "b", generate_dataset(cfg, {5, 5, 5, 5, 5}));
  int files = 0;
  for (const auto& e : std::filesystem::directory_iterator(tmp.path / "a")) {
    const auto name = e.path().filename();
    EXPECT_EQ(std::hash<std::string>{}(file_bytes(e.path())), std::hash<std::string>{}(file_bytes(tmp.path / "b" / name)))
        << name;
    EXPECT_EQ(file_bytes(e.path()), file_bytes(tmp.path / "b" / name)) << name;
    ++files;
  }
  EXPECT_EQ(files, 25 * 6 + 1);
}

TEST(Synthgen, DatasetRoundTrip) {
  fixtures::TempDir tmp("synth_rt");
  SynthConfig cfg;
  const auto ds = generate_dataset(cfg, {1, 1, 1, 1, 1});
  write_dataset(tmp.path, ds);
  const auto back = read_dataset(tmp.path);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back[i].id, ds[i].id);
    EXPECT_EQ(back[i].grade, ds[i].grade);
    EXPECT_EQ(back[i].lesion_flags, ds[i].lesion_flags);
    EXPECT_EQ(back[i].image, ds[i].image);
    EXPECT_EQ(back[i].vessel_mask.data, ds[i].vessel_mask.data);
    for (int k = 0; k < kNumLesions; ++k) EXPECT_EQ(back[i].lesion_masks[k].data, ds[i].lesion_masks[k].data);
  }
  std::ifstream csv(tmp.path / "labels.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "id,grade,ma,he,se,ex");
}

TEST(Synthgen, MissingDatasetNamesLabelsFile) {
  try {
    read_dataset("/nonexistent/twlr/data");
    FAIL();
  } catch (const MissingArtifact& e) {
    EXPECT_NE(e.path().find("labels.csv"), std::string::npos);
  }
}
