#pragma once

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "twlr/classifier.hpp"
#include "twlr/encoder.hpp"
#include "twlr/error.hpp"
#include "twlr/rng.hpp"
#include "twlr/synthgen.hpp"

namespace twlr {

enum class Optimizer { SGD, Adam };

struct TrainHyper {
  double lr = 0.05;
  int epochs = 30;
  int batch_size = 16;
  std::uint64_t seed = 1;
  Optimizer optimizer = Optimizer::SGD;
  double weight_decay = 0.0;  // decoupled; Adam only
  bool augment = false;       // random flips, translation and per-channel gain jitter
  int max_shift = 8;          // translation range in pixels when augmenting

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidInput("train: lr must be positive");
    if (epochs < 0) throw InvalidInput("train: epochs must be >= 0");
    if (batch_size < 1) throw InvalidInput("train: batch_size must be >= 1");
    if (weight_decay < 0) throw InvalidInput("train: weight_decay must be >= 0");
    if (max_shift < 0) throw InvalidInput("train: max_shift must be >= 0");
  }
};

struct TrainLog {
  double initial_loss = 0;
  double final_loss = 0;
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
};

struct LabeledImage {
  const Image* image;
  TargetVector target;
};

/// Translation matters for saliency: it keeps the patch projection from
/// tying features to fixed positions inside a patch.
inline Image augment_image(const Image& src, Rng& rng, int max_shift = 8) {
  const bool flip_h = rng.uniform() < 0.5;
  const bool flip_v = rng.uniform() < 0.5;
  const int shift_x = max_shift > 0 ? rng.uniform_int(-max_shift, max_shift) : 0;
  const int shift_y = max_shift > 0 ? rng.uniform_int(-max_shift, max_shift) : 0;
  std::array<double, 3> gain{rng.uniform(0.92, 1.08), rng.uniform(0.92, 1.08), rng.uniform(0.92, 1.08)};
  Image out(src.width, src.height, src.channels);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      int sx = x - shift_x, sy = y - shift_y;
      if (sx < 0 || sy < 0 || sx >= src.width || sy >= src.height) continue;
      if (flip_h) sx = src.width - 1 - sx;
      if (flip_v) sy = src.height - 1 - sy;
      for (int c = 0; c < src.channels; ++c)
        out.at(x, y, c) = clamp_to_byte(src.at(sx, sy, c) * gain[c % 3]);
    }
  return out;
}

/// Mean semantic loss over the whole set at the given parameters.
inline double full_batch_loss(const std::vector<Mat>& patches, const std::vector<TargetVector>& targets,
                              const EncoderParams& params, const Eigen::MatrixXd& text) {
  if (patches.empty()) throw InvalidInput("full_batch_loss: empty dataset");
  double total = 0;
  for (std::size_t i = 0; i < patches.size(); ++i)
    total += sample_loss_and_gradient(patches[i], params, text, targets[i], nullptr);
  return total / static_cast<double>(patches.size());
}

/// Minibatch gradient descent on the semantic loss with the text rows frozen.
inline EncoderParams train(const std::vector<FundusSample>& dataset, EncoderParams params,
                           const Eigen::MatrixXd& text, const TrainHyper& hyper,
                           TrainLog* log = nullptr) {
  hyper.validate();
  if (dataset.empty()) throw InvalidInput("train: dataset is empty");
  const auto& cfg = params.config;

  std::vector<Mat> patches;
  std::vector<TargetVector> targets;
  for (const auto& s : dataset) {
    patches.push_back(image_patches(s.image, cfg));
    targets.push_back(TargetVector::make(s));
  }
  TrainLog local;
  TrainLog& lg = log ? *log : local;
  lg.epoch_loss.clear();
  try {
    lg.initial_loss = full_batch_loss(patches, targets, params, text);
  } catch (const NumericalError& e) {
    throw TrainingDivergence(0, e.what());
  }
  if (!std::isfinite(lg.initial_loss)) throw TrainingDivergence(0, "initial loss is not finite");

  EncoderParams m1, m2;
  if (hyper.optimizer == Optimizer::Adam) {
    m1 = params.zeros_like();
    m2 = params.zeros_like();
  }
  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  long step = 0;

  std::vector<std::size_t> order(dataset.size());
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(hyper.seed, "train.epoch", epoch));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.next() % i]);

    double epoch_total = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t end = std::min(order.size(), start + hyper.batch_size);
      const double weight = 1.0 / static_cast<double>(end - start);
      EncoderParams grads = params.zeros_like();
      double batch_loss = 0;
      try {
        for (std::size_t b = start; b < end; ++b) {
          const std::size_t i = order[b];
          if (hyper.augment) {
            Image aug = augment_image(dataset[i].image, rng, hyper.max_shift);
            batch_loss += sample_loss_and_gradient(image_patches(aug, cfg), params, text, targets[i], &grads, weight);
          } else {
            batch_loss += sample_loss_and_gradient(patches[i], params, text, targets[i], &grads, weight);
          }
        }
      } catch (const NumericalError& e) {
        throw TrainingDivergence(epoch, e.what());
      }
      if (!std::isfinite(batch_loss) || !grads.all_finite())
        throw TrainingDivergence(epoch, "non-finite loss or gradient");
      epoch_total += batch_loss;

      if (hyper.optimizer == Optimizer::SGD) {
        params.axpy(-hyper.lr, grads);
      } else {
        ++step;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        std::vector<Mat*> g, a, b;
        grads.visit([&](const std::string&, Mat& m) { g.push_back(&m); });
        m1.visit([&](const std::string&, Mat& m) { a.push_back(&m); });
        m2.visit([&](const std::string&, Mat& m) { b.push_back(&m); });
        std::size_t k = 0;
        params.visit([&](const std::string& name, Mat& p) {
          Mat& mg = *g[k];
          Mat& ma = *a[k];
          Mat& mb = *b[k];
          ++k;
          ma = beta1 * ma + (1 - beta1) * mg;
          mb = beta2 * mb + (1 - beta2) * mg.cwiseProduct(mg);
          if (hyper.weight_decay > 0 && name != "log_temperature") p *= 1.0 - hyper.lr * hyper.weight_decay;
          p.array() -= hyper.lr * (ma.array() / c1) / ((mb.array() / c2).sqrt() + adam_eps);
        });
      }
    }
    const double mean_loss = epoch_total / static_cast<double>(order.size());
    if (!std::isfinite(mean_loss) || !params.all_finite())
      throw TrainingDivergence(epoch, "parameters became non-finite");
    lg.epoch_loss.push_back(mean_loss);
  }
  lg.final_loss = full_batch_loss(patches, targets, params, text);
  if (!std::isfinite(lg.final_loss)) throw TrainingDivergence(hyper.epochs, "final loss is not finite");
  return params;
}

}  // namespace twlr
