#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "twlr/error.hpp"
#include "twlr/rng.hpp"
#include "twlr/synthgen.hpp"

namespace twlr {

/// Clinical text descriptions standing in for the class labels. Each class may
/// carry several descriptions.
struct DescriptionSet {
  std::vector<std::pair<int, std::string>> grade_descriptions;
  std::vector<std::pair<int, std::string>> lesion_descriptions;
  int embedding_dim = 64;

  void validate() const {
    std::array<int, kNumGrades> grade_seen{};
    std::array<int, kNumLesions> lesion_seen{};
    for (const auto& [k, text] : grade_descriptions) {
      if (k < 0 || k >= kNumGrades) throw InvalidInput("grade description index out of range");
      if (text.empty()) throw InvalidInput("empty grade description for class " + std::to_string(k));
      ++grade_seen[k];
    }
    for (const auto& [k, text] : lesion_descriptions) {
      if (k < 0 || k >= kNumLesions) throw InvalidInput("lesion description index out of range");
      if (text.empty()) throw InvalidInput("empty lesion description for class " + std::to_string(k));
      ++lesion_seen[k];
    }
    for (int k = 0; k < kNumGrades; ++k)
      if (!grade_seen[k]) throw InvalidInput("no description for grade " + std::to_string(k));
    for (int k = 0; k < kNumLesions; ++k)
      if (!lesion_seen[k]) throw InvalidInput(std::string("no description for lesion ") + kLesionNames[k]);
    if (embedding_dim <= 0) throw InvalidInput("embedding_dim must be positive");
  }
};

struct TextEmbeddings {
  Eigen::MatrixXd grade;   // 5 × D
  Eigen::MatrixXd lesion;  // 4 × D

  /// Grade rows first, then lesion rows.
  Eigen::MatrixXd concatenated() const {
    Eigen::MatrixXd out(grade.rows() + lesion.rows(), grade.cols());
    out << grade, lesion;
    return out;
  }
};

inline DescriptionSet default_descriptions(int dim = 64) {
  DescriptionSet d;
  d.embedding_dim = dim;
  d.grade_descriptions = {
      {0, "no diabetic retinopathy, healthy retina without abnormalities"},
      {1, "mild nonproliferative diabetic retinopathy with microaneurysms only"},
      {2, "moderate nonproliferative diabetic retinopathy with hemorrhages and hard exudates "
          "beyond microaneurysms"},
      {3, "severe nonproliferative diabetic retinopathy with many hemorrhages, cotton wool spots "
          "and extensive exudates"},
      {4, "proliferative diabetic retinopathy with widespread hemorrhages, exudates and "
          "neovascularization"},
  };
  d.lesion_descriptions = {
      {0, "microaneurysms seen as tiny round red dots"},
      {1, "hemorrhages seen as dark red blots with irregular borders"},
      {2, "soft exudates seen as pale fluffy cotton wool spots"},
      {3, "hard exudates seen as bright yellow waxy deposits"},
  };
  return d;
}

/// Parses `grade.<k> = <text>` and `lesion.<name> = <text>` lines. Repeated
/// keys add descriptions. `#` starts a comment line.
inline DescriptionSet parse_descriptions(std::istream& in, int dim = 64) {
  DescriptionSet d;
  d.embedding_dim = dim;
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    auto ws = [](unsigned char c) { return std::isspace(c); };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
    return s;
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidInput("descriptions line " + std::to_string(lineno) + ": expected key = text");
    std::string key = trim(line.substr(0, eq));
    std::string text = trim(line.substr(eq + 1));
    if (text.empty()) throw InvalidInput("descriptions line " + std::to_string(lineno) + ": empty text");
    if (key.rfind("grade.", 0) == 0) {
      d.grade_descriptions.emplace_back(std::stoi(key.substr(6)), text);
    } else if (key.rfind("lesion.", 0) == 0) {
      std::string name = key.substr(7);
      std::transform(name.begin(), name.end(), name.begin(), ::toupper);
      int idx = -1;
      for (int k = 0; k < kNumLesions; ++k)
        if (name == kLesionNames[k]) idx = k;
      if (idx < 0) throw InvalidInput("descriptions line " + std::to_string(lineno) + ": unknown lesion " + name);
      d.lesion_descriptions.emplace_back(idx, text);
    } else {
      throw InvalidInput("descriptions line " + std::to_string(lineno) + ": unknown key " + key);
    }
  }
  d.validate();
  return d;
}

inline DescriptionSet load_descriptions(const std::filesystem::path& path, int dim = 64) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact(path.string());
  return parse_descriptions(in, dim);
}

namespace detail {

inline std::vector<std::string> text_features(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);

  std::vector<std::string> feats;
  for (std::size_t i = 0; i < words.size(); ++i) {
    feats.push_back("w:" + words[i]);
    if (i + 1 < words.size()) feats.push_back("b:" + words[i] + "_" + words[i + 1]);
    std::string padded = "#" + words[i] + "#";
    for (std::size_t j = 0; j + 3 <= padded.size(); ++j) feats.push_back("c:" + padded.substr(j, 3));
  }
  return feats;
}

}  // namespace detail

/// Frozen hashed n-gram projection: every word unigram, word bigram and
/// character trigram seeds its own Gaussian direction; the text vector is the
/// count-weighted sum of those directions, L2-normalized.
inline Eigen::VectorXd embed_text(const std::string& text, int dim) {
  auto feats = detail::text_features(text);
  if (feats.empty()) throw InvalidInput("embed_text: text has no tokens");
  std::map<std::string, int> counts;
  for (auto& f : feats) ++counts[f];
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  for (const auto& [feat, n] : counts) {
    Rng rng(splitmix64(fnv1a64(feat)));
    for (int i = 0; i < dim; ++i) v[i] += n * rng.normal();
  }
  return v / v.norm();
}

inline TextEmbeddings encode_text(const DescriptionSet& descriptions) {
  descriptions.validate();
  const int D = descriptions.embedding_dim;
  auto pool = [D](const std::vector<std::pair<int, std::string>>& items, int classes) {
    Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(classes, D);
    std::vector<int> n(classes, 0);
    for (const auto& [k, text] : items) {
      rows.row(k) += embed_text(text, D).transpose();
      ++n[k];
    }
    for (int k = 0; k < classes; ++k) {
      rows.row(k) /= n[k];
      rows.row(k).normalize();
    }
    return rows;
  };
  return {pool(descriptions.grade_descriptions, kNumGrades),
          pool(descriptions.lesion_descriptions, kNumLesions)};
}

}  // namespace twlr
