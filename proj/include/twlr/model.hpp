#pragma once

#include "twlr/classifier.hpp"
#include "twlr/encoder.hpp"
#include "twlr/saliency.hpp"
#include "twlr/text_encoder.hpp"

namespace twlr {

/// What the severity-regression loop needs from a classifier.
class Grader {
 public:
  virtual ~Grader() = default;
  virtual PredictionRecord grade(const Image& image) const = 0;
  virtual SaliencyMap saliency(const Image& image, int target_class) const = 0;
};

/// Trained image encoder plus frozen text rows.
class VisionLanguageModel : public Grader {
 public:
  VisionLanguageModel(EncoderParams params, Eigen::MatrixXd text)
      : params_(std::move(params)), text_(std::move(text)) {
    if (text_.rows() != kNumClasses || text_.cols() != params_.config.dim)
      throw InvalidInput("VisionLanguageModel: text rows must be 9 x dim");
  }
  VisionLanguageModel(EncoderParams params, const TextEmbeddings& text)
      : VisionLanguageModel(std::move(params), text.concatenated()) {}

  PredictionRecord grade(const Image& image) const override {
    return predict(similarity_scores(text_, encode_image(image, params_)), params_.temperature());
  }

  SaliencyMap saliency(const Image& image, int target_class) const override {
    return guided_backprop(image, params_, text_, target_class);
  }

  const EncoderParams& params() const { return params_; }
  const Eigen::MatrixXd& text() const { return text_; }

 private:
  EncoderParams params_;
  Eigen::MatrixXd text_;
};

}  // namespace twlr
