#pragma once

// Minimal trainable CNN used as the software reference: convolutions run as
// im2col + unrolled-matrix products, so every trainable layer is exactly the
// WeightMatrix that gets mapped onto crossbars.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "xbarsim/error.hpp"
#include "xbarsim/model_spec.hpp"
#include "xbarsim/pruning.hpp"
#include "xbarsim/rng.hpp"
#include "xbarsim/tiling.hpp"

namespace xbarsim {

// ---------------------------------------------------------------------------
// Data

struct Dataset {
  Matrix images;            // one sample per row, channel-major C*H*W, values in [0, 1]
  std::vector<int> labels;  // in [0, classes)
  int channels = 1;
  int height = 8;
  int width = 8;
  int classes = 4;
  std::string split = "train";

  int size() const { return static_cast<int>(labels.size()); }
};

struct SyntheticData {
  Dataset train;
  Dataset test;
};

inline constexpr double kSyntheticNoise = 0.15;

namespace detail {

// Base 8x8 patterns: 0 horizontal bar, 1 vertical bar, 2 diagonal, 3 blob.
inline Eigen::VectorXd synthetic_image(int label, Rng& rng) {
  Eigen::MatrixXd img = Eigen::MatrixXd::Zero(8, 8);  // (y, x)
  switch (label) {
    case 0: {
      const int y = 1 + static_cast<int>(rng.below(6));
      img.row(y).setOnes();
      break;
    }
    case 1: {
      const int x = 1 + static_cast<int>(rng.below(6));
      img.col(x).setOnes();
      break;
    }
    case 2: {
      const int offset = static_cast<int>(rng.below(5)) - 2;
      const bool anti = rng.below(2) == 1;
      for (int y = 0; y < 8; ++y) {
        const int x = anti ? 7 - y + offset : y + offset;
        if (x >= 0 && x < 8) img(y, x) = 1.0;
      }
      break;
    }
    default: {
      const int y0 = 1 + static_cast<int>(rng.below(4));
      const int x0 = 1 + static_cast<int>(rng.below(4));
      img.block(y0, x0, 3, 3).setOnes();
      break;
    }
  }
  Eigen::VectorXd flat(64);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      flat(y * 8 + x) = std::clamp(img(y, x) + kSyntheticNoise * rng.normal(), 0.0, 1.0);
  return flat;
}

inline Dataset synthetic_split(std::uint64_t seed, int n, const std::string& split) {
  Dataset d;
  d.split = split;
  d.images.resize(n, 64);
  d.labels.resize(static_cast<std::size_t>(n));
  Rng rng(seed);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % 4;
  rng.shuffle(labels);
  for (int i = 0; i < n; ++i) {
    d.labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)];
    d.images.row(i) = synthetic_image(labels[static_cast<std::size_t>(i)], rng).transpose();
  }
  return d;
}

}  // namespace detail

/// Four-class 1x8x8 toy image set (bars, diagonal, blob) with Gaussian pixel
/// noise; class balanced and fully determined by `seed`.
inline SyntheticData gen_synthetic_dataset(std::uint64_t seed, int n_train, int n_test) {
  detail::require(n_train >= 1 && n_test >= 1, "dataset sizes must be >= 1");
  return {detail::synthetic_split(derive_seed(seed, {0}), n_train, "train"),
          detail::synthetic_split(derive_seed(seed, {1}), n_test, "test")};
}

// ---------------------------------------------------------------------------
// Convolution unrolling

/// Conv kernel in [out][in][kh][kw] order.
struct ConvWeights {
  int out_ch = 0;
  int in_ch = 0;
  int kernel = 0;
  std::vector<double> data;

  double& at(int o, int c, int kh, int kw) {
    return data[static_cast<std::size_t>(((o * in_ch + c) * kernel + kh) * kernel + kw)];
  }
  double at(int o, int c, int kh, int kw) const {
    return data[static_cast<std::size_t>(((o * in_ch + c) * kernel + kh) * kernel + kw)];
  }
};

struct UnrollLayout {
  int out_ch = 0;
  int in_ch = 0;
  int kernel = 0;
};

/// (in_ch*k*k) x out_ch matrix; row = c*k*k + kh*k + kw.
inline std::pair<Matrix, UnrollLayout> unroll_conv(const ConvWeights& w) {
  detail::require(w.out_ch >= 1 && w.in_ch >= 1 && w.kernel >= 1 &&
                      w.data.size() == static_cast<std::size_t>(w.out_ch * w.in_ch * w.kernel * w.kernel),
                  "unroll_conv: inconsistent kernel shape");
  const int kk = w.kernel * w.kernel;
  Matrix m(w.in_ch * kk, w.out_ch);
  for (int o = 0; o < w.out_ch; ++o)
    for (int c = 0; c < w.in_ch; ++c)
      for (int kh = 0; kh < w.kernel; ++kh)
        for (int kw = 0; kw < w.kernel; ++kw) m(c * kk + kh * w.kernel + kw, o) = w.at(o, c, kh, kw);
  return {std::move(m), UnrollLayout{w.out_ch, w.in_ch, w.kernel}};
}

inline ConvWeights reroll_conv(const Matrix& m, const UnrollLayout& layout) {
  const int kk = layout.kernel * layout.kernel;
  detail::require(m.rows() == layout.in_ch * kk && m.cols() == layout.out_ch,
                  "reroll_conv: matrix does not match layout");
  ConvWeights w{layout.out_ch, layout.in_ch, layout.kernel,
                std::vector<double>(static_cast<std::size_t>(m.size()))};
  for (int o = 0; o < w.out_ch; ++o)
    for (int c = 0; c < w.in_ch; ++c)
      for (int kh = 0; kh < w.kernel; ++kh)
        for (int kw = 0; kw < w.kernel; ++kw) w.at(o, c, kh, kw) = m(c * kk + kh * w.kernel + kw, o);
  return w;
}

/// Patch matrix for a batch held as (B*H*W) x C (row = b*H*W + y*W + x).
/// Result is (B*oH*oW) x (C*k*k), zero outside the image.
inline Matrix im2col(const Matrix& x, int batch, int h, int w, const LayerSpec& l, int oh, int ow) {
  const int c_in = static_cast<int>(x.cols());
  const int k = l.kernel;
  Matrix p = Matrix::Zero(static_cast<Eigen::Index>(batch) * oh * ow, c_in * k * k);
  for (int b = 0; b < batch; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const Eigen::Index row = (static_cast<Eigen::Index>(b) * oh + oy) * ow + ox;
        for (int c = 0; c < c_in; ++c)
          for (int kh = 0; kh < k; ++kh) {
            const int iy = oy * l.stride - l.padding + kh;
            if (iy < 0 || iy >= h) continue;
            for (int kw = 0; kw < k; ++kw) {
              const int ix = ox * l.stride - l.padding + kw;
              if (ix < 0 || ix >= w) continue;
              p(row, (c * k + kh) * k + kw) = x((static_cast<Eigen::Index>(b) * h + iy) * w + ix, c);
            }
          }
      }
  return p;
}

/// Adjoint of im2col.
inline Matrix col2im(const Matrix& dp, int batch, int c_in, int h, int w, const LayerSpec& l, int oh,
                     int ow) {
  const int k = l.kernel;
  Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(batch) * h * w, c_in);
  for (int b = 0; b < batch; ++b)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const Eigen::Index row = (static_cast<Eigen::Index>(b) * oh + oy) * ow + ox;
        for (int c = 0; c < c_in; ++c)
          for (int kh = 0; kh < k; ++kh) {
            const int iy = oy * l.stride - l.padding + kh;
            if (iy < 0 || iy >= h) continue;
            for (int kw = 0; kw < k; ++kw) {
              const int ix = ox * l.stride - l.padding + kw;
              if (ix < 0 || ix >= w) continue;
              dx((static_cast<Eigen::Index>(b) * h + iy) * w + ix, c) += dp(row, (c * k + kh) * k + kw);
            }
          }
      }
  return dx;
}

// ---------------------------------------------------------------------------
// Model

struct Model {
  ModelSpec spec;
  std::vector<Matrix> weights;         // one WeightMatrix per trainable layer
  std::vector<Eigen::VectorXd> biases;  // digital, never mapped to crossbars

  std::vector<TrainableShape> shapes() const { return spec.trainable_shapes(); }
};

/// He-normal weights, zero biases, seeded by spec.init_seed.
inline Model init_model(const ModelSpec& spec) {
  Model m;
  m.spec = spec;
  const auto shapes = spec.trainable_shapes();
  for (std::size_t l = 0; l < shapes.size(); ++l) {
    Rng rng(derive_seed(spec.init_seed, {static_cast<std::uint64_t>(l)}));
    const double std_dev = std::sqrt(2.0 / shapes[l].rows);
    Matrix w(shapes[l].rows, shapes[l].cols);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.normal(0.0, std_dev);
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::VectorXd::Zero(shapes[l].cols));
  }
  return m;
}

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Eigen::VectorXd> biases;
};

namespace detail {

struct LayerCache {
  Matrix input;     // conv: patch matrix, dense: flattened input, relu: pre-activation
  std::vector<Eigen::Index> argmax;  // maxpool
  int batch = 0, c = 0, h = 0, w = 0, oh = 0, ow = 0;
  bool flattened_from_map = false;
};

// Activations are (B*H*W) x C while spatial, B x F once dense.
struct ForwardState {
  Matrix out;
  std::vector<LayerCache> caches;
};

inline Matrix flatten_maps(const Matrix& x, int batch, int hw) {
  const auto c = x.cols();
  Matrix f(batch, c * hw);
  for (int b = 0; b < batch; ++b)
    for (Eigen::Index ch = 0; ch < c; ++ch)
      f.row(b).segment(ch * hw, hw) = x.block(static_cast<Eigen::Index>(b) * hw, ch, hw, 1).transpose();
  return f;
}

inline Matrix unflatten_maps(const Matrix& f, int batch, int c, int hw) {
  Matrix x(static_cast<Eigen::Index>(batch) * hw, c);
  for (int b = 0; b < batch; ++b)
    for (int ch = 0; ch < c; ++ch)
      x.block(static_cast<Eigen::Index>(b) * hw, ch, hw, 1) = f.row(b).segment(ch * hw, hw).transpose();
  return x;
}

/// Images (one per row, channel-major) to the (B*H*W) x C layout.
inline Matrix images_to_maps(const Matrix& images, int c, int h, int w) {
  return unflatten_maps(images, static_cast<int>(images.rows()), c, h * w);
}

inline ForwardState forward(const Model& m, const Matrix& images, bool keep_cache) {
  const ModelSpec& spec = m.spec;
  const int batch = static_cast<int>(images.rows());
  int c = spec.in_channels, h = spec.in_height, w = spec.in_width;
  bool flat = false;
  ForwardState st;
  Matrix x = images_to_maps(images, c, h, w);
  std::size_t t = 0;
  for (const LayerSpec& l : spec.layers) {
    LayerCache cache;
    cache.batch = batch;
    cache.c = c;
    cache.h = h;
    cache.w = w;
    switch (l.kind) {
      case LayerKind::conv: {
        const int oh = (h + 2 * l.padding - l.kernel) / l.stride + 1;
        const int ow = (w + 2 * l.padding - l.kernel) / l.stride + 1;
        Matrix p = im2col(x, batch, h, w, l, oh, ow);
        x = p * m.weights[t];
        x.rowwise() += m.biases[t].transpose();
        cache.oh = oh;
        cache.ow = ow;
        if (keep_cache) cache.input = std::move(p);
        h = oh;
        w = ow;
        c = l.out_ch;
        ++t;
        break;
      }
      case LayerKind::dense: {
        if (!flat) {
          x = flatten_maps(x, batch, h * w);
          cache.flattened_from_map = true;
          flat = true;
        }
        Matrix y = x * m.weights[t];
        y.rowwise() += m.biases[t].transpose();
        if (keep_cache) cache.input = std::move(x);
        x = std::move(y);
        c = l.out;
        h = w = 1;
        ++t;
        break;
      }
      case LayerKind::relu: {
        if (keep_cache) cache.input = x;
        x = x.cwiseMax(0.0);
        break;
      }
      case LayerKind::maxpool: {
        const int oh = h / 2, ow = w / 2;
        Matrix y(static_cast<Eigen::Index>(batch) * oh * ow, c);
        if (keep_cache) cache.argmax.resize(static_cast<std::size_t>(y.size()));
        for (int b = 0; b < batch; ++b)
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
              const Eigen::Index orow = (static_cast<Eigen::Index>(b) * oh + oy) * ow + ox;
              for (int ch = 0; ch < c; ++ch) {
                Eigen::Index best = (static_cast<Eigen::Index>(b) * h + 2 * oy) * w + 2 * ox;
                for (int dy = 0; dy < 2; ++dy)
                  for (int dx = 0; dx < 2; ++dx) {
                    const Eigen::Index r = (static_cast<Eigen::Index>(b) * h + 2 * oy + dy) * w + 2 * ox + dx;
                    if (x(r, ch) > x(best, ch)) best = r;
                  }
                y(orow, ch) = x(best, ch);
                if (keep_cache) cache.argmax[static_cast<std::size_t>(ch * y.rows() + orow)] = best;
              }
            }
        cache.oh = oh;
        cache.ow = ow;
        x = std::move(y);
        h = oh;
        w = ow;
        break;
      }
    }
    if (keep_cache) st.caches.push_back(std::move(cache));
  }
  st.out = flat ? std::move(x) : flatten_maps(x, batch, h * w);
  return st;
}

}  // namespace detail

/// Logits, one row per image.
inline Matrix predict_logits(const Model& m, const Matrix& images) {
  return detail::forward(m, images, false).out;
}

/// Mean softmax cross-entropy over the batch and its gradients.
inline std::pair<double, Gradients> loss_and_gradients(const Model& m, const Matrix& images,
                                                       const std::vector<int>& labels) {
  const int batch = static_cast<int>(images.rows());
  detail::require(batch >= 1 && static_cast<int>(labels.size()) == batch,
                  "loss_and_gradients: batch/label mismatch");
  auto st = detail::forward(m, images, true);
  const Matrix& logits = st.out;
  Matrix grad(logits.rows(), logits.cols());
  double loss = 0.0;
  for (int b = 0; b < batch; ++b) {
    const double mx = logits.row(b).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(b).array() - mx).exp().matrix();
    const double z = e.sum();
    const int y = labels[static_cast<std::size_t>(b)];
    detail::require(y >= 0 && y < logits.cols(), "loss_and_gradients: label out of range");
    loss += -(logits(b, y) - mx - std::log(z));
    grad.row(b) = e / z;
    grad(b, y) -= 1.0;
  }
  loss /= batch;
  grad /= batch;

  Gradients g;
  const auto n_train = m.weights.size();
  g.weights.resize(n_train);
  g.biases.resize(n_train);
  std::size_t t = n_train;
  Matrix d = std::move(grad);
  for (std::size_t li = m.spec.layers.size(); li-- > 0;) {
    const LayerSpec& l = m.spec.layers[li];
    const detail::LayerCache& cache = st.caches[li];
    switch (l.kind) {
      case LayerKind::dense: {
        --t;
        g.weights[t] = cache.input.transpose() * d;
        g.biases[t] = d.colwise().sum().transpose();
        d = d * m.weights[t].transpose();
        if (cache.flattened_from_map) d = detail::unflatten_maps(d, batch, cache.c, cache.h * cache.w);
        break;
      }
      case LayerKind::conv: {
        --t;
        g.weights[t] = cache.input.transpose() * d;
        g.biases[t] = d.colwise().sum().transpose();
        const Matrix dp = d * m.weights[t].transpose();
        d = col2im(dp, batch, cache.c, cache.h, cache.w, l, cache.oh, cache.ow);
        break;
      }
      case LayerKind::relu:
        d = (cache.input.array() > 0.0).select(d, 0.0);
        break;
      case LayerKind::maxpool: {
        Matrix dx = Matrix::Zero(static_cast<Eigen::Index>(batch) * cache.h * cache.w, cache.c);
        for (Eigen::Index ch = 0; ch < d.cols(); ++ch)
          for (Eigen::Index r = 0; r < d.rows(); ++r)
            dx(cache.argmax[static_cast<std::size_t>(ch * d.rows() + r)], ch) += d(r, ch);
        d = std::move(dx);
        break;
      }
    }
  }
  return {loss, std::move(g)};
}

inline double mean_loss(const Model& m, const Dataset& data) {
  detail::require(data.size() >= 1, "mean_loss: empty dataset");
  const Matrix logits = predict_logits(m, data.images);
  double loss = 0.0;
  for (int b = 0; b < data.size(); ++b) {
    const double mx = logits.row(b).maxCoeff();
    const double z = (logits.row(b).array() - mx).exp().sum();
    const int y = data.labels[static_cast<std::size_t>(b)];
    detail::require(y >= 0 && y < logits.cols(), "mean_loss: label out of range");
    loss += -(logits(b, y) - mx - std::log(z));
  }
  return loss / data.size();
}

/// Fraction of argmax-correct predictions.
inline double evaluate(const Model& m, const Dataset& data) {
  if (data.size() == 0) throw UsageError("evaluate: empty dataset");
  int correct = 0;
  constexpr int kChunk = 512;
  for (int start = 0; start < data.size(); start += kChunk) {
    const int count = std::min(kChunk, data.size() - start);
    const Matrix logits = predict_logits(m, data.images.middleRows(start, count));
    for (int b = 0; b < count; ++b) {
      Eigen::Index arg;
      logits.row(b).maxCoeff(&arg);
      if (arg == data.labels[static_cast<std::size_t>(start + b)]) ++correct;
    }
  }
  return static_cast<double>(correct) / data.size();
}

// ---------------------------------------------------------------------------
// Training, pruning masks and weight-constrained training

struct WctSettings {
  double percentile = 90.0;
  int epochs = 2;
  bool per_layer = false;
  std::optional<double> w_cut;  // explicit cutoff overrides the percentile
};

struct TrainConfig {
  double lr = 0.05;
  int batch_size = 32;
  int epochs = 15;
  std::uint64_t seed = 1;
  std::optional<SparsityPattern> pattern;
  std::optional<WctSettings> wct;

  void validate() const {
    detail::require(lr > 0 && std::isfinite(lr), "learning rate must be positive");
    detail::require(batch_size >= 1, "batch size must be >= 1");
    detail::require(epochs >= 0, "epochs must be >= 0");
    if (wct) {
      detail::require(wct->percentile > 0 && wct->percentile <= 100,
                      "WCT percentile must lie in (0, 100]");
      detail::require(wct->epochs >= 0, "WCT epochs must be >= 0");
      if (wct->w_cut) detail::require(*wct->w_cut > 0, "W_cut must be positive");
    }
  }
};

/// Zeroes pruned weights and the biases of fully pruned output units.
inline void enforce_mask(Model& m, const SparsityPattern& p) {
  if (p.masks.empty()) return;
  detail::require(p.masks.size() == m.weights.size(), "pattern does not match model");
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    m.weights[l] = apply_mask(m.weights[l], p.masks[l]);
    for (Eigen::Index c = 0; c < p.masks[l].cols(); ++c)
      if ((p.masks[l].col(c).array() == 0.0).all()) m.biases[l](c) = 0.0;
  }
}

/// Elementwise min(|w|, w_cut) * sign(w).
inline Matrix wct_clamp(const Matrix& w, double w_cut) {
  detail::require(w_cut > 0, "wct_clamp: W_cut must be positive");
  return w.cwiseMax(-w_cut).cwiseMin(w_cut);
}

namespace detail {

inline double nearest_rank(std::vector<double> v, double p) {
  require(!v.empty(), "wct_cutoff: no weights");
  std::sort(v.begin(), v.end());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(v.size()) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, v.size());
  return v[rank - 1];
}

inline std::vector<double> surviving_magnitudes(const Model& m, std::size_t l,
                                                const SparsityPattern* p) {
  std::vector<double> out;
  const Matrix& w = m.weights[l];
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      if (!p || p->masks.empty() || p->masks[l](i, j) != 0.0) out.push_back(std::fabs(w(i, j)));
  return out;
}

}  // namespace detail

/// Nearest-rank p-th percentile of |w| pooled over every trainable weight.
/// Pruned positions are left out when a pattern is given.
inline double wct_cutoff(const Model& m, double percentile, const SparsityPattern* pattern = nullptr) {
  detail::require(percentile > 0 && percentile <= 100, "wct_cutoff: percentile must lie in (0, 100]");
  std::vector<double> all;
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    auto v = detail::surviving_magnitudes(m, l, pattern);
    all.insert(all.end(), v.begin(), v.end());
  }
  return detail::nearest_rank(std::move(all), percentile);
}

/// Per-layer variant of wct_cutoff.
inline std::vector<double> wct_layer_cutoffs(const Model& m, double percentile,
                                             const SparsityPattern* pattern = nullptr) {
  detail::require(percentile > 0 && percentile <= 100, "wct_cutoff: percentile must lie in (0, 100]");
  std::vector<double> out;
  for (std::size_t l = 0; l < m.weights.size(); ++l)
    out.push_back(detail::nearest_rank(detail::surviving_magnitudes(m, l, pattern), percentile));
  return out;
}

struct TrainResult {
  Model model;
  double initial_loss = 0.0;
  std::vector<double> loss_curve;  // mean minibatch loss per epoch
  std::vector<double> w_cut;       // WCT cutoffs in force (one per layer), empty otherwise
};

namespace detail {

inline TrainResult sgd(Model m, const Dataset& data, const TrainConfig& cfg, int epochs,
                       std::uint64_t stream, const std::vector<double>& w_cut) {
  require(data.size() >= 1, "train: empty dataset");
  TrainResult res;
  res.w_cut = w_cut;
  auto project = [&](Model& model) {
    if (cfg.pattern) enforce_mask(model, *cfg.pattern);
    if (!w_cut.empty())
      for (std::size_t l = 0; l < model.weights.size(); ++l)
        model.weights[l] = wct_clamp(model.weights[l], w_cut[l]);
  };
  project(m);
  res.initial_loss = mean_loss(m, data);
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, {stream, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);
    double epoch_loss = 0.0;
    int batches = 0;
    for (int start = 0; start < data.size(); start += cfg.batch_size) {
      const int count = std::min(cfg.batch_size, data.size() - start);
      Matrix x(count, data.images.cols());
      std::vector<int> y(static_cast<std::size_t>(count));
      for (int b = 0; b < count; ++b) {
        const int idx = order[static_cast<std::size_t>(start + b)];
        x.row(b) = data.images.row(idx);
        y[static_cast<std::size_t>(b)] = data.labels[static_cast<std::size_t>(idx)];
      }
      auto [loss, g] = loss_and_gradients(m, x, y);
      if (!std::isfinite(loss)) throw NumericError("train: non-finite loss (diverged)");
      for (std::size_t l = 0; l < m.weights.size(); ++l) {
        m.weights[l] -= cfg.lr * g.weights[l];
        m.biases[l] -= cfg.lr * g.biases[l];
      }
      project(m);
      epoch_loss += loss;
      ++batches;
    }
    res.loss_curve.push_back(epoch_loss / batches);
  }
  res.model = std::move(m);
  return res;
}

}  // namespace detail

/// Minibatch SGD on cross-entropy. With a sparsity pattern the mask is
/// re-applied after every step, so pruned weights stay exactly zero.
inline TrainResult train(const Model& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  return detail::sgd(model, data, cfg, cfg.epochs, 0, {});
}

/// Projected retraining: every step is followed by the clamp to
/// [-W_cut, W_cut] (and the mask, if pruned). Cutoffs come from the incoming
/// trained weights.
inline TrainResult wct_train(const Model& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  const WctSettings wct = cfg.wct.value_or(WctSettings{});
  const SparsityPattern* p = cfg.pattern ? &*cfg.pattern : nullptr;
  std::vector<double> cuts;
  if (wct.w_cut)
    cuts.assign(model.weights.size(), *wct.w_cut);
  else if (wct.per_layer)
    cuts = wct_layer_cutoffs(model, wct.percentile, p);
  else
    cuts.assign(model.weights.size(), wct_cutoff(model, wct.percentile, p));
  return detail::sgd(model, data, cfg, wct.epochs, 1, cuts);
}

/// Copy of `m` whose trainable weights are replaced by `w_prime`.
inline Model inject_nonideal_weights(const Model& m, const std::vector<Matrix>& w_prime) {
  if (w_prime.size() != m.weights.size())
    throw UsageError("inject_nonideal_weights: expected " + std::to_string(m.weights.size()) +
                     " layers, got " + std::to_string(w_prime.size()));
  Model out = m;
  for (std::size_t l = 0; l < w_prime.size(); ++l) {
    if (w_prime[l].rows() != m.weights[l].rows() || w_prime[l].cols() != m.weights[l].cols())
      throw UsageError("inject_nonideal_weights: shape mismatch at layer " + std::to_string(l));
    out.weights[l] = w_prime[l];
  }
  return out;
}

}  // namespace xbarsim
