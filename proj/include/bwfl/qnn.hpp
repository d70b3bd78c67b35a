#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bwfl/datasets.hpp"
#include "bwfl/error.hpp"
#include "bwfl/random.hpp"

namespace bwfl {

// ---------------------------------------------------------------------------
// Scalar quantizer

// Floor-biased rounding: ties at the midpoint go down.
inline double rounding_R(double x) {
  const double lo = std::floor(x);
  const double hi = std::ceil(x);
  return x <= (lo + hi) / 2.0 ? lo : hi;
}

inline double htanh(double x) { return std::max(-1.0, std::min(1.0, x)); }

// Straight-through derivative of the quantizer. The clip boundary is
// inclusive so weights sitting exactly on a +-1 grid point keep training.
inline double htanh_grad(double x) { return std::abs(x) <= 1.0 ? 1.0 : 0.0; }

inline void check_bitwidth(int alpha, int V) {
  if (V < 2) throw InvalidBitwidth("full-precision bitwidth V=" + std::to_string(V) + " < 2");
  if (alpha < 1 || alpha > V) {
    throw InvalidBitwidth("bitwidth " + std::to_string(alpha) + " outside [1, " +
                          std::to_string(V) + "]");
  }
}

// Number of positive grid levels for 1 < alpha < V: values are k / levels.
inline double grid_levels(int alpha) { return std::ldexp(1.0, alpha) - 1.0; }

// alpha == 1: sign with sign(0) = +1. 1 < alpha < V: R((2^a - 1) w) / (2^a - 1)
// after clamping w to [-1, 1]. alpha == V: identity.
inline double quantize(double w, int alpha, int V) {
  check_bitwidth(alpha, V);
  if (!std::isfinite(w)) throw NumericError("quantize: non-finite input");
  if (alpha == V) return w;
  if (alpha == 1) return w >= 0.0 ? 1.0 : -1.0;
  const double levels = grid_levels(alpha);
  return rounding_R(levels * std::clamp(w, -1.0, 1.0)) / levels;
}

inline std::vector<double> quantize(std::span<const double> w, int alpha, int V) {
  check_bitwidth(alpha, V);
  std::vector<double> out(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) out[i] = quantize(w[i], alpha, V);
  return out;
}

// ---------------------------------------------------------------------------
// Bit-plane arithmetic

// Sign-magnitude fixed-point encoding of an alpha-bit quantized vector:
// value_i = (-1)^sign_i * sum_j 2^j plane_j[i] / (2^alpha - 1).
class BitPlaneVector {
 public:
  static constexpr int kMaxBits = 32;

  BitPlaneVector() = default;

  BitPlaneVector(std::span<const double> values, int alpha)
      : alpha_(alpha), size_(values.size()), words_((values.size() + 63) / 64) {
    if (alpha < 2 || alpha > kMaxBits) {
      throw InvalidBitwidth("bit-plane encoding needs 2 <= alpha <= 32, got " +
                            std::to_string(alpha));
    }
    sign_.assign(words_, 0);
    planes_.assign(static_cast<std::size_t>(alpha) * words_, 0);
    const double levels = grid_levels(alpha);
    for (std::size_t i = 0; i < size_; ++i) {
      const double scaled = values[i] * levels;
      const double code = std::nearbyint(scaled);
      if (!(std::abs(scaled - code) <= 1e-6) || std::abs(code) > levels) {
        throw ArgumentError("bit-plane encoding: value " + std::to_string(values[i]) +
                            " is not on the " + std::to_string(alpha) + "-bit grid");
      }
      const std::uint64_t word = i / 64;
      const std::uint64_t bit = std::uint64_t{1} << (i % 64);
      if (code < 0) sign_[word] |= bit;
      auto magnitude = static_cast<std::uint64_t>(std::abs(code));
      for (int j = 0; magnitude != 0; ++j, magnitude >>= 1) {
        if (magnitude & 1u) planes_[static_cast<std::size_t>(j) * words_ + word] |= bit;
      }
    }
  }

  int alpha() const { return alpha_; }
  std::size_t size() const { return size_; }

  friend double bitplane_inner_product(const BitPlaneVector& a, const BitPlaneVector& b);

 private:
  int alpha_ = 0;
  std::size_t size_ = 0;
  std::size_t words_ = 0;
  std::vector<std::uint64_t> sign_;
  std::vector<std::uint64_t> planes_;
};

// sum_i sum_j 2^(i+j) (a^i . b^j), with the sign plane splitting each popcount
// into agreeing and disagreeing lanes, rescaled by the shared grid factor.
inline double bitplane_inner_product(const BitPlaneVector& a, const BitPlaneVector& b) {
  if (a.size_ != b.size_) {
    throw ShapeError("bit-plane inner product: lengths " + std::to_string(a.size_) + " and " +
                     std::to_string(b.size_) + " differ");
  }
  if (a.alpha_ != b.alpha_) {
    throw ShapeError("bit-plane inner product: bitwidths " + std::to_string(a.alpha_) + " and " +
                     std::to_string(b.alpha_) + " differ");
  }
  const std::size_t W = a.words_;
  std::vector<std::uint64_t> flip(W);
  for (std::size_t w = 0; w < W; ++w) flip[w] = a.sign_[w] ^ b.sign_[w];

  __int128 acc = 0;
  for (int i = 0; i < a.alpha_; ++i) {
    const std::uint64_t* ai = a.planes_.data() + static_cast<std::size_t>(i) * W;
    for (int j = 0; j < b.alpha_; ++j) {
      const std::uint64_t* bj = b.planes_.data() + static_cast<std::size_t>(j) * W;
      std::int64_t count = 0;
      for (std::size_t w = 0; w < W; ++w) {
        const std::uint64_t both = ai[w] & bj[w];
        count += std::popcount(both & ~flip[w]);
        count -= std::popcount(both & flip[w]);
      }
      acc += static_cast<__int128>(count) << (i + j);
    }
  }
  const double levels = grid_levels(a.alpha_);
  return static_cast<double>(acc) / levels / levels;
}

inline double bitplane_inner_product(std::span<const double> a, std::span<const double> b,
                                     int alpha) {
  if (a.size() != b.size()) {
    throw ShapeError("bit-plane inner product: lengths " + std::to_string(a.size()) + " and " +
                     std::to_string(b.size()) + " differ");
  }
  return bitplane_inner_product(BitPlaneVector(a, alpha), BitPlaneVector(b, alpha));
}

// ---------------------------------------------------------------------------
// Model types

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }

  bool operator==(const Matrix&) const = default;
};

// Full-precision weights. layers[k] maps layer_dims[k] inputs to
// layer_dims[k+1] outputs (rows = outputs). No bias terms.
struct ModelParams {
  std::vector<Matrix> layers;
  std::vector<std::size_t> layer_dims;
  int V = 32;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.values.size();
    return n;
  }
  bool operator==(const ModelParams&) const = default;
};

struct QuantizedModel {
  std::vector<Matrix> layers;
  std::vector<std::size_t> layer_dims;
  int alpha = 32;
  int V = 32;

  bool operator==(const QuantizedModel&) const = default;
};

inline void validate(const ModelParams& m) {
  if (m.layers.empty()) throw ShapeError("model has no layers");
  if (m.layer_dims.size() != m.layers.size() + 1) {
    throw ShapeError("layer_dims must have one more entry than layers");
  }
  if (m.V < 2) throw InvalidBitwidth("V must be >= 2");
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    const auto& l = m.layers[k];
    if (l.cols != m.layer_dims[k] || l.rows != m.layer_dims[k + 1] ||
        l.values.size() != l.rows * l.cols) {
      throw ShapeError("layer " + std::to_string(k) + " shape disagrees with layer_dims");
    }
    for (double w : l.values) {
      if (!std::isfinite(w)) throw NumericError("layer " + std::to_string(k) + " has non-finite weight");
    }
  }
}

// Uniform [-1, 1] weights; the activation gain 2/sqrt(fan_in) keeps
// pre-activations O(1) so the fixed [-1, 1] quantization grid is used fully.
inline ModelParams init_model(const std::vector<std::size_t>& layer_dims, int V, Rng& rng) {
  if (layer_dims.size() < 2) throw ShapeError("need at least input and output widths");
  ModelParams m;
  m.layer_dims = layer_dims;
  m.V = V;
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (std::size_t k = 0; k + 1 < layer_dims.size(); ++k) {
    Matrix w(layer_dims[k + 1], layer_dims[k]);
    for (double& x : w.values) x = u(rng);
    m.layers.push_back(std::move(w));
  }
  return m;
}

inline QuantizedModel quantize(const ModelParams& m, int alpha) {
  check_bitwidth(alpha, m.V);
  QuantizedModel q;
  q.layer_dims = m.layer_dims;
  q.alpha = alpha;
  q.V = m.V;
  q.layers.reserve(m.layers.size());
  for (const auto& l : m.layers) {
    Matrix ql(l.rows, l.cols);
    for (std::size_t i = 0; i < l.values.size(); ++i) ql.values[i] = quantize(l.values[i], alpha, m.V);
    q.layers.push_back(std::move(ql));
  }
  return q;
}

inline ModelParams to_params(const QuantizedModel& q) {
  return ModelParams{q.layers, q.layer_dims, q.V};
}

// ---------------------------------------------------------------------------
// Forward pass

// Pre-activations are scaled by 2/sqrt(fan_in). With weights in [-1, 1] this
// keeps hidden units off the flat part of the hard tanh at initialization.
inline double activation_gain(std::size_t fan_in) { return 2.0 / std::sqrt(static_cast<double>(fan_in)); }

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Outputs h^1..h^K of each layer.
struct Activations {
  std::vector<std::vector<double>> layers;
  const std::vector<double>& output() const { return layers.back(); }
};

// Everything backprop needs from one forward pass.
struct ForwardTrace {
  std::vector<std::vector<double>> inputs;  // operand fed to each layer's product
  std::vector<std::vector<double>> preacts; // gain * inner product
  Activations acts;
};

// Product kernel for 1 < alpha < V. Both give the same exact integer sum
// before rescaling, so results are bit-identical; `integer` multiplies the
// fixed-point codes directly and is much faster at high bitwidths.
enum class ProductKernel { bitplane, integer };

namespace detail {

inline std::int64_t grid_code(double v, double levels) { return static_cast<std::int64_t>(std::nearbyint(v * levels)); }

inline double integer_inner_product(std::span<const std::int64_t> a, std::span<const std::int64_t> b,
                                    double levels) {
  __int128 acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<__int128>(a[i]) * b[i];
  return static_cast<double>(acc) / levels / levels;
}

}  // namespace detail

// Evaluates a quantized model. Weight rows are encoded once so repeated
// forward passes over a batch do not re-encode them.
class QuantizedForward {
 public:
  explicit QuantizedForward(const QuantizedModel& model, ProductKernel kernel = ProductKernel::integer)
      : model_(&model), kernel_(kernel) {
    if (model.layers.empty()) throw ShapeError("model has no layers");
    check_bitwidth(model.alpha, model.V);
    if (!fixed_point()) return;
    if (model.alpha > BitPlaneVector::kMaxBits) {
      throw InvalidBitwidth("fixed-point forward pass needs alpha <= 32");
    }
    const double levels = grid_levels(model.alpha);
    for (const auto& l : model.layers) {
      if (kernel_ == ProductKernel::bitplane) {
        auto& rows = planes_.emplace_back();
        rows.reserve(l.rows);
        for (std::size_t r = 0; r < l.rows; ++r) rows.emplace_back(l.row(r), model.alpha);
      } else {
        auto& codes = codes_.emplace_back(l.values.size());
        for (std::size_t i = 0; i < l.values.size(); ++i) codes[i] = detail::grid_code(l.values[i], levels);
      }
    }
  }

  ForwardTrace trace(std::span<const double> x) const {
    const auto& layers = model_->layers;
    if (x.size() != layers.front().cols) {
      throw ShapeError("forward: input dimension " + std::to_string(x.size()) +
                       " does not match layer 1 width " + std::to_string(layers.front().cols));
    }
    const int alpha = model_->alpha;
    const std::size_t K = layers.size();
    ForwardTrace t;
    t.inputs.resize(K);
    t.preacts.resize(K);
    t.acts.layers.resize(K);
    std::vector<double> h(x.begin(), x.end());
    for (std::size_t k = 0; k < K; ++k) {
      const Matrix& W = layers[k];
      const double gain = activation_gain(W.cols);
      std::vector<double>& z = t.preacts[k];
      z.resize(W.rows);
      if (alpha == model_->V) {
        for (std::size_t r = 0; r < W.rows; ++r) {
          const double* w = W.values.data() + r * W.cols;
          double s = 0.0;
          for (std::size_t c = 0; c < W.cols; ++c) s += w[c] * h[c];
          z[r] = gain * s;
        }
        t.inputs[k] = std::move(h);
      } else if (alpha == 1) {
        // Binary weights: the product reduces to signed accumulation.
        for (std::size_t r = 0; r < W.rows; ++r) {
          const double* w = W.values.data() + r * W.cols;
          double s = 0.0;
          for (std::size_t c = 0; c < W.cols; ++c) s += w[c] > 0.0 ? h[c] : -h[c];
          z[r] = gain * s;
        }
        t.inputs[k] = std::move(h);
      } else {
        std::vector<double> hq = quantize(h, alpha, model_->V);
        if (kernel_ == ProductKernel::bitplane) {
          const BitPlaneVector hb(hq, alpha);
          for (std::size_t r = 0; r < W.rows; ++r) z[r] = gain * bitplane_inner_product(hb, planes_[k][r]);
        } else {
          const double levels = grid_levels(alpha);
          std::vector<std::int64_t> hc(hq.size());
          for (std::size_t c = 0; c < hq.size(); ++c) hc[c] = detail::grid_code(hq[c], levels);
          const std::span<const std::int64_t> codes(codes_[k]);
          for (std::size_t r = 0; r < W.rows; ++r) {
            z[r] = gain * detail::integer_inner_product(hc, codes.subspan(r * W.cols, W.cols), levels);
          }
        }
        t.inputs[k] = std::move(hq);
      }
      std::vector<double> out(W.rows);
      if (k + 1 < K) {
        for (std::size_t r = 0; r < W.rows; ++r) out[r] = htanh(z[r]);
      } else {
        for (std::size_t r = 0; r < W.rows; ++r) out[r] = sigmoid(z[r]);
      }
      t.acts.layers[k] = out;
      h = std::move(out);
    }
    return t;
  }

  Activations operator()(std::span<const double> x) const { return trace(x).acts; }

  const QuantizedModel& model() const { return *model_; }

 private:
  bool fixed_point() const { return model_->alpha > 1 && model_->alpha < model_->V; }

  const QuantizedModel* model_;
  ProductKernel kernel_;
  std::vector<std::vector<BitPlaneVector>> planes_;
  std::vector<std::vector<std::int64_t>> codes_;
};

inline Activations forward(const QuantizedModel& model, std::span<const double> x,
                           ProductKernel kernel = ProductKernel::integer) {
  return QuantizedForward(model, kernel)(x);
}

// Full-precision forward pass (identical to the alpha == V path).
inline Activations forward(const ModelParams& model, std::span<const double> x) {
  QuantizedModel passthrough{model.layers, model.layer_dims, model.V, model.V};
  return QuantizedForward(passthrough)(x);
}

// ---------------------------------------------------------------------------
// Loss

inline constexpr double kLogClip = 1e-12;

// -[y log h + (1 - y) log(1 - h)] summed over outputs, h clipped away from 0/1.
inline double cross_entropy(std::span<const double> h, std::span<const double> y) {
  if (h.size() != y.size()) throw ShapeError("cross_entropy: output/label size mismatch");
  double loss = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double p = std::clamp(h[i], kLogClip, 1.0 - kLogClip);
    loss -= y[i] * std::log(p) + (1.0 - y[i]) * std::log(1.0 - p);
  }
  return loss;
}

inline std::vector<double> one_hot(int label, std::size_t classes) {
  std::vector<double> y(classes, 0.0);
  y[static_cast<std::size_t>(label)] = 1.0;
  return y;
}

// ---------------------------------------------------------------------------
// Backpropagation

struct Gradient {
  std::vector<Matrix> layers;
};

inline Gradient zero_gradient(const std::vector<Matrix>& like) {
  Gradient g;
  for (const auto& l : like) g.layers.emplace_back(l.rows, l.cols);
  return g;
}

// Adds d f / d W for one sample to `grad`, where W are the weights the
// forward pass actually used. Activation quantization is passed straight
// through. Returns the sample loss.
inline double accumulate_sample_gradient(const QuantizedForward& net, std::span<const double> x,
                                         int label, Gradient& grad) {
  const auto& layers = net.model().layers;
  const ForwardTrace t = net.trace(x);
  const std::size_t K = layers.size();
  const auto& out = t.acts.output();
  const std::vector<double> y = one_hot(label, out.size());
  const double loss = cross_entropy(out, y);

  // Sigmoid + binary cross-entropy: d f / d z = h - y.
  std::vector<double> delta(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) delta[i] = out[i] - y[i];

  for (std::size_t k = K; k-- > 0;) {
    const Matrix& W = layers[k];
    const double gain = activation_gain(W.cols);
    const std::vector<double>& in = t.inputs[k];
    Matrix& G = grad.layers[k];
    for (std::size_t r = 0; r < W.rows; ++r) {
      const double d = gain * delta[r];
      double* g = G.values.data() + r * G.cols;
      for (std::size_t c = 0; c < W.cols; ++c) g[c] += d * in[c];
    }
    if (k == 0) break;
    std::vector<double> back(W.cols, 0.0);
    for (std::size_t r = 0; r < W.rows; ++r) {
      const double d = gain * delta[r];
      const double* w = W.values.data() + r * W.cols;
      for (std::size_t c = 0; c < W.cols; ++c) back[c] += w[c] * d;
    }
    const std::vector<double>& z = t.preacts[k - 1];
    for (std::size_t c = 0; c < W.cols; ++c) back[c] *= htanh_grad(z[c]);
    delta = std::move(back);
  }
  return loss;
}

struct LossAndGradient {
  double loss = 0.0;  // mean over samples
  Gradient gradient;  // mean over samples
};

// Full-precision loss and gradient of (1/N) sum_n f(g, x_n, y_n).
inline LossAndGradient loss_and_gradient(const ModelParams& model, const Dataset& ds,
                                         std::span<const std::size_t> indices) {
  QuantizedModel passthrough{model.layers, model.layer_dims, model.V, model.V};
  const QuantizedForward net(passthrough);
  LossAndGradient out{0.0, zero_gradient(model.layers)};
  for (std::size_t i : indices) out.loss += accumulate_sample_gradient(net, ds.input(i), ds.labels[i], out.gradient);
  if (!indices.empty()) {
    const double inv = 1.0 / static_cast<double>(indices.size());
    out.loss *= inv;
    for (auto& l : out.gradient.layers)
      for (double& v : l.values) v *= inv;
  }
  return out;
}

inline double squared_norm(const Gradient& g) {
  double s = 0.0;
  for (const auto& l : g.layers)
    for (double v : l.values) s += v * v;
  return s;
}

struct LocalUpdate {
  ModelParams model;
  double loss_sum = 0.0;  // sum of per-sample losses under g_hat
};

// One local step: w = g_hat - lambda * sum_n d f / d g, where the gradient
// flows through the quantized forward pass and, when g_hat is actually
// quantized (alpha < V), through the straight-through mask htanh'(g) of the
// full-precision weights.
inline LocalUpdate local_update(const ModelParams& full, const QuantizedModel& g_hat,
                                const Dataset& ds, std::span<const std::size_t> batch,
                                double lambda) {
  if (!(lambda > 0.0)) throw ArgumentError("learning rate must be > 0");
  if (batch.empty()) throw ArgumentError("local update needs a nonempty batch");
  if (full.layers.size() != g_hat.layers.size()) throw ShapeError("model/quantized layer count mismatch");

  const QuantizedForward net(g_hat);
  Gradient grad = zero_gradient(g_hat.layers);
  LocalUpdate out;
  for (std::size_t i : batch) out.loss_sum += accumulate_sample_gradient(net, ds.input(i), ds.labels[i], grad);

  const bool ste = g_hat.alpha < g_hat.V;
  out.model.layer_dims = g_hat.layer_dims;
  out.model.V = g_hat.V;
  out.model.layers.reserve(g_hat.layers.size());
  for (std::size_t k = 0; k < g_hat.layers.size(); ++k) {
    const Matrix& q = g_hat.layers[k];
    const Matrix& G = grad.layers[k];
    const Matrix& g = full.layers[k];
    if (g.values.size() != q.values.size()) throw ShapeError("layer " + std::to_string(k) + " shape mismatch");
    Matrix w(q.rows, q.cols);
    for (std::size_t i = 0; i < q.values.size(); ++i) {
      const double d = ste ? G.values[i] * htanh_grad(g.values[i]) : G.values[i];
      if (!std::isfinite(d)) {
        throw NumericError("non-finite gradient in layer " + std::to_string(k));
      }
      w.values[i] = q.values[i] - lambda * d;
    }
    out.model.layers.push_back(std::move(w));
  }
  return out;
}

inline ModelParams backward_update(const ModelParams& full, const QuantizedModel& g_hat,
                                   const Dataset& ds, std::span<const std::size_t> batch,
                                   double lambda) {
  return local_update(full, g_hat, ds, batch, lambda).model;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline double accuracy(const QuantizedModel& model, const Dataset& ds,
                       std::span<const std::size_t> indices) {
  if (indices.empty()) return 0.0;
  const QuantizedForward net(model);
  std::size_t correct = 0;
  for (std::size_t i : indices) {
    const auto acts = net(ds.input(i));
    if (static_cast<int>(argmax(acts.output())) == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

}  // namespace bwfl
