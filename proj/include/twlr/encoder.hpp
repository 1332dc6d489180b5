#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "twlr/error.hpp"
#include "twlr/image.hpp"
#include "twlr/rng.hpp"

namespace twlr {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

// ---------------------------------------------------------------------------
// Patches

/// Splits an H×W×3 image into N = HW/P² flattened patches (one per row),
/// patches in row-major order, each flattened as (row, col, channel).
/// Values are the raw 0..255 intensities.
inline Mat patchify(const Image& image, int patch) {
  if (patch <= 0 || image.width % patch != 0 || image.height % patch != 0)
    throw InvalidInput("patchify: image " + std::to_string(image.width) + "x" +
                       std::to_string(image.height) + " not divisible by patch size " +
                       std::to_string(patch));
  const int C = image.channels;
  const int gx = image.width / patch, gy = image.height / patch;
  Mat out(gx * gy, patch * patch * C);
  for (int py = 0; py < gy; ++py)
    for (int px = 0; px < gx; ++px) {
      const int row = py * gx + px;
      int col = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < C; ++c) out(row, col++) = image.at(px * patch + x, py * patch + y, c);
    }
  return out;
}

inline Image unpatchify(const Mat& patches, int width, int height, int patch, int channels = 3) {
  const int gx = width / patch, gy = height / patch;
  if (patches.rows() != gx * gy || patches.cols() != patch * patch * channels)
    throw InvalidInput("unpatchify: patch matrix shape does not match geometry");
  Image out(width, height, channels);
  for (int py = 0; py < gy; ++py)
    for (int px = 0; px < gx; ++px) {
      const int row = py * gx + px;
      int col = 0;
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < channels; ++c)
            out.at(px * patch + x, py * patch + y, c) = clamp_to_byte(patches(row, col++));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Parameters

struct EncoderConfig {
  int image_size = 64;
  int patch_size = 16;
  int dim = 64;
  int layers = 2;
  int heads = 4;
  int ffn_dim = 128;
  double temperature = 10.0;

  int num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  int patch_dim() const { return patch_size * patch_size * 3; }

  void validate() const {
    if (patch_size <= 0 || image_size % patch_size != 0)
      throw InvalidInput("encoder: image_size must be divisible by patch_size");
    if (dim <= 0 || heads <= 0 || dim % heads != 0)
      throw InvalidInput("encoder: dim must be a positive multiple of heads");
    if (layers < 0 || ffn_dim <= 0) throw InvalidInput("encoder: invalid layers/ffn_dim");
    if (!(temperature > 0.0)) throw InvalidInput("encoder: temperature must be positive");
  }
};

struct LayerParams {
  Mat ln1_gain, ln1_bias;  // 1×D
  Mat wq, wk, wv, wo;      // D×D
  Mat ln2_gain, ln2_bias;  // 1×D
  Mat w1, b1;              // D×F, 1×F
  Mat w2, b2;              // F×D, 1×D
};

/// Every trainable tensor is an Eigen matrix so a single visitor covers
/// initialization, optimizer steps, checkpoints and gradient checks. The
/// temperature is stored in log space to keep it positive under updates.
struct EncoderParams {
  EncoderConfig config;
  Mat projection;   // (P²·3)×D
  Mat positional;   // (N+1)×D, row 0 belongs to the cls token
  Mat cls_token;    // 1×D
  std::vector<LayerParams> layers;
  Mat log_temperature;  // 1×1

  double temperature() const { return std::exp(log_temperature(0, 0)); }

  template <typename Self, typename F>
  static void visit_impl(Self& self, F&& f) {
    f("projection", self.projection);
    f("positional", self.positional);
    f("cls_token", self.cls_token);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layer" + std::to_string(l) + ".";
      f(p + "ln1_gain", L.ln1_gain);
      f(p + "ln1_bias", L.ln1_bias);
      f(p + "wq", L.wq);
      f(p + "wk", L.wk);
      f(p + "wv", L.wv);
      f(p + "wo", L.wo);
      f(p + "ln2_gain", L.ln2_gain);
      f(p + "ln2_bias", L.ln2_bias);
      f(p + "w1", L.w1);
      f(p + "b1", L.b1);
      f(p + "w2", L.w2);
      f(p + "b2", L.b2);
    }
    f("log_temperature", self.log_temperature);
  }
  template <typename F>
  void visit(F&& f) { visit_impl(*this, std::forward<F>(f)); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, std::forward<F>(f)); }

  /// Same shapes, all zeros (gradient accumulator).
  EncoderParams zeros_like() const {
    EncoderParams z = *this;
    z.visit([](const std::string&, Mat& m) { m.setZero(); });
    return z;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Mat& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  bool all_finite() const {
    bool ok = true;
    visit([&](const std::string&, const Mat& m) { ok = ok && m.allFinite(); });
    return ok;
  }

  void axpy(double alpha, const EncoderParams& other) {
    std::vector<const Mat*> src;
    other.visit([&](const std::string&, const Mat& m) { src.push_back(&m); });
    std::size_t i = 0;
    visit([&](const std::string&, Mat& m) { m += alpha * *src[i++]; });
  }

  friend bool operator==(const EncoderParams& a, const EncoderParams& b) {
    std::vector<const Mat*> rhs;
    b.visit([&](const std::string&, const Mat& m) { rhs.push_back(&m); });
    std::vector<const Mat*> lhs;
    a.visit([&](const std::string&, const Mat& m) { lhs.push_back(&m); });
    if (lhs.size() != rhs.size()) return false;
    for (std::size_t i = 0; i < lhs.size(); ++i) {
      if (lhs[i]->rows() != rhs[i]->rows() || lhs[i]->cols() != rhs[i]->cols()) return false;
      if (*lhs[i] != *rhs[i]) return false;
    }
    return true;
  }
};

inline EncoderParams init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "encoder.init"));
  auto randn = [&](int r, int c, double sd) {
    Mat m(r, c);
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i) m(i, j) = sd * rng.normal();
    return m;
  };
  const int D = cfg.dim, F = cfg.ffn_dim;
  EncoderParams p;
  p.config = cfg;
  p.projection = randn(cfg.patch_dim(), D, 0.02);
  p.positional = randn(cfg.num_patches() + 1, D, 0.02);
  p.cls_token = randn(1, D, 0.02);
  for (int l = 0; l < cfg.layers; ++l) {
    LayerParams L;
    L.ln1_gain = Mat::Ones(1, D);
    L.ln1_bias = Mat::Zero(1, D);
    L.wq = randn(D, D, 1.0 / std::sqrt(D));
    L.wk = randn(D, D, 1.0 / std::sqrt(D));
    L.wv = randn(D, D, 1.0 / std::sqrt(D));
    L.wo = randn(D, D, 0.5 / std::sqrt(D));
    L.ln2_gain = Mat::Ones(1, D);
    L.ln2_bias = Mat::Zero(1, D);
    L.w1 = randn(D, F, std::sqrt(2.0 / D));
    L.b1 = Mat::Zero(1, F);
    L.w2 = randn(F, D, 0.5 / std::sqrt(F));
    L.b2 = Mat::Zero(1, D);
    p.layers.push_back(std::move(L));
  }
  p.log_temperature = Mat::Constant(1, 1, std::log(cfg.temperature));
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Mat xhat;  // normalized input
  Vec rstd;  // per row 1/sqrt(var+eps)
};

inline Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias, LayerNormCache& cache) {
  const int n = static_cast<int>(x.cols());
  Vec mean = x.rowwise().mean();
  Mat centered = x.colwise() - mean;
  Vec var = centered.array().square().rowwise().sum() / n;
  cache.rstd = (var.array() + kLayerNormEps).rsqrt();
  cache.xhat = centered.array().colwise() * cache.rstd.array();
  Mat y = cache.xhat.array().rowwise() * gain.row(0).array();
  y.rowwise() += bias.row(0);
  return y;
}

inline Mat layer_norm_backward(const Mat& dy, const Mat& gain, const LayerNormCache& cache,
                               Mat* dgain, Mat* dbias) {
  const double n = static_cast<double>(dy.cols());
  if (dgain) *dgain += (dy.array() * cache.xhat.array()).colwise().sum().matrix();
  if (dbias) *dbias += dy.colwise().sum();
  Mat dxhat = dy.array().rowwise() * gain.row(0).array();
  Vec m1 = dxhat.rowwise().sum() / n;
  Vec m2 = (dxhat.array() * cache.xhat.array()).rowwise().sum() / n;
  Mat dx = dxhat;
  dx.colwise() -= m1;
  dx -= (cache.xhat.array().colwise() * m2.array()).matrix();
  return dx.array().colwise() * cache.rstd.array();
}

struct LayerCache {
  Mat input;
  LayerNormCache ln1;
  Mat a, q, k, v;
  std::vector<Mat> attn;  // per head (T×T) softmax probabilities
  Mat heads_out;          // T×D concatenated head outputs
  Mat mid;                // residual stream after attention
  LayerNormCache ln2;
  Mat b, hidden;          // pre-activation FFN
  Mat act;                // relu(hidden)
};

struct ForwardCache {
  Mat patches;  // N×(P²·3), scaled to [-1,1]
  Mat tokens0;  // (N+1)×D
  std::vector<LayerCache> layers;
  Mat tokens_out;
  RowVec cls_out;       // un-normalized cls row
  double cls_norm = 0;  // ||cls_out||
  RowVec embedding;     // cls_out / ||cls_out||
};

inline void check_geometry(const Image& image, const EncoderConfig& cfg) {
  if (image.width != cfg.image_size || image.height != cfg.image_size || image.channels != 3)
    throw InvalidInput("encoder: expected " + std::to_string(cfg.image_size) + "x" +
                       std::to_string(cfg.image_size) + "x3 image, got " +
                       std::to_string(image.width) + "x" + std::to_string(image.height) + "x" +
                       std::to_string(image.channels));
}

/// Runs the encoder on pre-extracted, already scaled patches.
inline ForwardCache encode_patches(const Mat& patches, const EncoderParams& p) {
  const auto& cfg = p.config;
  const int N = cfg.num_patches(), D = cfg.dim, H = cfg.heads, dh = D / H;
  if (patches.rows() != N || patches.cols() != cfg.patch_dim())
    throw InvalidInput("encoder: patch matrix shape mismatch");
  ForwardCache fc;
  fc.patches = patches;
  fc.tokens0.resize(N + 1, D);
  fc.tokens0.row(0) = p.cls_token.row(0);
  fc.tokens0.bottomRows(N) = patches * p.projection;
  fc.tokens0 += p.positional;

  Mat z = fc.tokens0;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& L : p.layers) {
    LayerCache lc;
    lc.input = z;
    lc.a = layer_norm(z, L.ln1_gain, L.ln1_bias, lc.ln1);
    lc.q = lc.a * L.wq;
    lc.k = lc.a * L.wk;
    lc.v = lc.a * L.wv;
    lc.heads_out.resize(z.rows(), D);
    for (int h = 0; h < H; ++h) {
      Mat s = lc.q.middleCols(h * dh, dh) * lc.k.middleCols(h * dh, dh).transpose() * scale;
      Vec mx = s.rowwise().maxCoeff();
      Mat e = (s.colwise() - mx).array().exp();
      Vec sum = e.rowwise().sum();
      Mat prob = e.array().colwise() / sum.array();
      lc.heads_out.middleCols(h * dh, dh) = prob * lc.v.middleCols(h * dh, dh);
      lc.attn.push_back(std::move(prob));
    }
    lc.mid = z + lc.heads_out * L.wo;
    lc.b = layer_norm(lc.mid, L.ln2_gain, L.ln2_bias, lc.ln2);
    lc.hidden = lc.b * L.w1;
    lc.hidden.rowwise() += L.b1.row(0);
    lc.act = lc.hidden.cwiseMax(0.0);
    z = lc.mid + lc.act * L.w2;
    z.rowwise() += L.b2.row(0);
    fc.layers.push_back(std::move(lc));
  }
  fc.tokens_out = z;
  fc.cls_out = z.row(0);
  fc.cls_norm = fc.cls_out.norm();
  fc.embedding = fc.cls_norm > 0 ? RowVec(fc.cls_out / fc.cls_norm) : RowVec(fc.cls_out);
  return fc;
}

// Encoder input is (intensity / 255 - 0.5) * 2, i.e. [-1, 1].
inline constexpr double kPixelScale = 2.0 / 255.0;
inline constexpr double kPixelShift = -1.0;

inline Mat image_patches(const Image& image, const EncoderConfig& cfg) {
  check_geometry(image, cfg);
  return (patchify(image, cfg.patch_size) * kPixelScale).array() + kPixelShift;
}

inline ForwardCache encode_image_cached(const Image& image, const EncoderParams& p) {
  return encode_patches(image_patches(image, p.config), p);
}

/// L2-normalized D-dimensional image embedding (the final cls row).
inline RowVec encode_image(const Image& image, const EncoderParams& p) {
  return encode_image_cached(image, p).embedding;
}

enum class ReluBackward {
  Standard,  // pass gradient where the forward activation is positive
  Guided,    // additionally zero negative incoming gradient
};

/// Backpropagates d(objective)/d(embedding) through the encoder. Parameter
/// gradients are accumulated into `grads` when non-null. Returns the gradient
/// with respect to the scaled patch matrix.
inline Mat encoder_backward(const ForwardCache& fc, const EncoderParams& p, const RowVec& d_embedding,
                            EncoderParams* grads, ReluBackward mode = ReluBackward::Standard) {
  const auto& cfg = p.config;
  const int N = cfg.num_patches(), D = cfg.dim, H = cfg.heads, dh = D / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Mat dz = Mat::Zero(N + 1, D);
  if (fc.cls_norm > 0) {
    const RowVec& e = fc.embedding;
    dz.row(0) = (d_embedding - e * e.dot(d_embedding)) / fc.cls_norm;
  } else {
    dz.row(0) = d_embedding;
  }

  for (int l = static_cast<int>(p.layers.size()) - 1; l >= 0; --l) {
    const LayerParams& L = p.layers[l];
    const LayerCache& lc = fc.layers[l];
    LayerParams* G = grads ? &grads->layers[l] : nullptr;

    // Feed-forward block: z = mid + relu(LN2(mid) W1 + b1) W2 + b2.
    Mat dact = dz * L.w2.transpose();
    if (G) {
      G->w2 += lc.act.transpose() * dz;
      G->b2 += dz.colwise().sum();
    }
    Mat dhidden = dact;
    for (Eigen::Index i = 0; i < dhidden.size(); ++i) {
      const bool pass = lc.hidden(i) > 0 && (mode == ReluBackward::Standard || dact(i) > 0);
      if (!pass) dhidden(i) = 0;
    }
    if (G) {
      G->w1 += lc.b.transpose() * dhidden;
      G->b1 += dhidden.colwise().sum();
    }
    Mat db = dhidden * L.w1.transpose();
    Mat dmid = dz + layer_norm_backward(db, L.ln2_gain, lc.ln2, G ? &G->ln2_gain : nullptr,
                                        G ? &G->ln2_bias : nullptr);

    // Attention block: mid = input + MHA(LN1(input)) Wo.
    Mat dheads = dmid * L.wo.transpose();
    if (G) G->wo += lc.heads_out.transpose() * dmid;
    Mat dq(lc.q.rows(), D), dk(lc.k.rows(), D), dv(lc.v.rows(), D);
    for (int h = 0; h < H; ++h) {
      const Mat& prob = lc.attn[h];
      Mat dout = dheads.middleCols(h * dh, dh);
      dv.middleCols(h * dh, dh) = prob.transpose() * dout;
      Mat dprob = dout * lc.v.middleCols(h * dh, dh).transpose();
      Vec rowdot = (dprob.array() * prob.array()).rowwise().sum();
      Mat ds = prob.array() * (dprob.colwise() - rowdot).array();
      dq.middleCols(h * dh, dh) = ds * lc.k.middleCols(h * dh, dh) * scale;
      dk.middleCols(h * dh, dh) = ds.transpose() * lc.q.middleCols(h * dh, dh) * scale;
    }
    if (G) {
      G->wq += lc.a.transpose() * dq;
      G->wk += lc.a.transpose() * dk;
      G->wv += lc.a.transpose() * dv;
    }
    Mat da = dq * L.wq.transpose() + dk * L.wk.transpose() + dv * L.wv.transpose();
    dz = dmid + layer_norm_backward(da, L.ln1_gain, lc.ln1, G ? &G->ln1_gain : nullptr,
                                    G ? &G->ln1_bias : nullptr);
  }

  if (grads) {
    grads->positional += dz;
    grads->cls_token += dz.row(0);
    grads->projection += fc.patches.transpose() * dz.bottomRows(N);
  }
  return dz.bottomRows(N) * p.projection.transpose();
}

}  // namespace twlr
