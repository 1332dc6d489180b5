#pragma once

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "twlr/model.hpp"
#include "twlr/rng.hpp"

namespace twlr::fixtures {

inline BinaryMask random_mask(Rng& rng, int w, int h, double p) {
  BinaryMask m(w, h);
  for (auto& v : m.data) v = rng.uniform() < p ? 1 : 0;
  return m;
}

inline Image random_image(Rng& rng, int w, int h, int channels = 3) {
  Image img(w, h, channels);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.uniform_int(0, 255));
  return img;
}

inline Image flat_image(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = r;
      img.at(x, y, 1) = g;
      img.at(x, y, 2) = b;
    }
  return img;
}

inline PredictionRecord grade_record(int grade) {
  ClassVector s{};
  s[grade] = 1.0;
  return predict(s, 10.0);
}

/// Returns grades from a script, one per grade() call; the last entry repeats.
/// Saliency is a hot 4×4 block whose position depends on the call count, so
/// every cycle masks a different block. Not thread-safe.
class ScriptedGrader : public Grader {
 public:
  explicit ScriptedGrader(std::vector<int> script) : script_(std::move(script)) {}

  PredictionRecord grade(const Image&) const override {
    const int g = script_[std::min(calls_, script_.size() - 1)];
    ++calls_;
    return grade_record(g);
  }

  SaliencyMap saliency(const Image& image, int target_class) const override {
    SaliencyMap s;
    s.source_class = target_class;
    s.values = FloatMap(image.width, image.height);
    const int k = static_cast<int>(saliency_calls_++);
    const int bx = (k * 5) % (image.width - 4), by = ((k * 5) / (image.width - 4) * 5) % (image.height - 4);
    for (int y = by; y < by + 4; ++y)
      for (int x = bx; x < bx + 4; ++x) s.values.at(x, y) = 1.0;
    return s;
  }

  std::size_t calls() const { return calls_; }

 private:
  std::vector<int> script_;
  mutable std::size_t calls_ = 0;
  mutable std::size_t saliency_calls_ = 0;
};

/// Pure stub: referable (grade 3) while any pixel has red == 255, otherwise 0.
/// Saliency marks those pixels.
class MarkerGrader : public Grader {
 public:
  PredictionRecord grade(const Image& image) const override { return grade_record(markers(image) ? 3 : 0); }
  SaliencyMap saliency(const Image& image, int target_class) const override {
    SaliencyMap s;
    s.source_class = target_class;
    s.values = FloatMap(image.width, image.height);
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) s.values.at(x, y) = image.at(x, y, 0) == 255 ? 1.0 : 0.0;
    return s;
  }
  static int markers(const Image& image) {
    int n = 0;
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) n += image.at(x, y, 0) == 255;
    return n;
  }
};

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / ("twlr_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

}  // namespace twlr::fixtures
