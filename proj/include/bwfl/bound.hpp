#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bwfl/action.hpp"
#include "bwfl/datasets.hpp"
#include "bwfl/error.hpp"
#include "bwfl/qnn.hpp"
#include "bwfl/random.hpp"

namespace bwfl {

enum class BoundMode { convex, nonconvex };

// Constants of the one-step loss-improvement bound. In convex mode the bound
// uses L; in nonconvex mode L_gamma replaces L and the residual
// M^2 Upsilon^4 / (2 L_gamma) is added.
struct BoundParams {
  double L = 1.0;
  double zeta1 = 1.0;
  double zeta2 = 1.0;
  double Beps2 = 0.1;
  BoundMode mode = BoundMode::convex;
  double Lgamma = 1.0;
  double Ups4M2 = 0.0;

  double smoothness() const { return mode == BoundMode::convex ? L : Lgamma; }
};

// Observable inputs to the bound for one round.
struct BoundFeatures {
  double grad_norm_sq = 0.0;  // ||grad F(g_t)||^2
  double A = 0.0;             // sum of selected devices' sample counts
  double N = 0.0;             // all devices' sample count
  int alpha = 32;
  std::size_t M = 1;          // device count
  int V = 32;
};

struct TransitionRecord {
  double F_t = 0.0;
  Action action;
  double F_next = 0.0;
  double grad_norm_sq = 0.0;
  double A = 0.0;
  double N = 0.0;
  int V = 32;

  BoundFeatures features() const {
    return {grad_norm_sq, A, N, action.alpha, action.u.size(), V};
  }
};

// E||Delta(alpha)|| = M 2^-alpha; zero at full precision where no
// quantization happens.
inline double quant_error_norm(int alpha, std::size_t M, int V = std::numeric_limits<int>::max()) {
  if (alpha < 1) throw InvalidBitwidth("quant_error_norm: bitwidth must be >= 1");
  if (alpha >= V) return 0.0;
  return static_cast<double>(M) * std::ldexp(1.0, -alpha);
}

inline void check_params(const BoundParams& p) {
  const double s = p.smoothness();
  if (!(s > 0.0) || !std::isfinite(s)) throw ParameterError("bound: smoothness constant must be > 0");
  for (double v : {p.zeta1, p.zeta2, p.Beps2, p.Ups4M2}) {
    if (!std::isfinite(v)) throw ParameterError("bound: non-finite parameter");
  }
}

// Upper bound on E F(g_{t+1}) - E F(g_t).
inline double bound_step(const BoundFeatures& f, const BoundParams& p) {
  check_params(p);
  const double L = p.smoothness();
  const double E = quant_error_norm(f.alpha, f.M, f.V);
  const double E2 = E * E;
  const double gap = f.N - f.A;
  const double sel = 4.0 * gap * gap / (f.N * f.N);
  const double descent = (-1.0 + sel * (E + 1.0) * p.zeta2) * f.grad_norm_sq / (2.0 * L);
  const double noise = (E + 1.0) / (2.0 * L) * (sel * (p.zeta1 + p.Beps2) + L * L * E);
  double k = descent + noise + E2;
  if (p.mode == BoundMode::nonconvex) k += p.Ups4M2 / (2.0 * L);
  return k;
}

// ---------------------------------------------------------------------------
// Non-i.i.d. diagnostic

struct NonIidDegree {
  std::vector<double> device_gap_norm;  // ||grad F(g) - grad F_m(g)|| per device
  double epsilon = 0.0;                 // sample-weighted mean of the gap norms over selected devices
};

inline NonIidDegree compute_epsilon(const ModelParams& model, const Dataset& ds,
                                    const DevicePartition& part,
                                    std::span<const std::uint8_t> selected = {}) {
  const auto all = part.all_indices();
  const auto global = loss_and_gradient(model, ds, all);
  NonIidDegree out;
  double weight_total = 0.0;
  double weighted = 0.0;
  for (std::size_t m = 0; m < part.num_devices(); ++m) {
    const auto local = loss_and_gradient(model, ds, part.devices[m]);
    double s = 0.0;
    for (std::size_t k = 0; k < local.gradient.layers.size(); ++k) {
      const auto& a = global.gradient.layers[k].values;
      const auto& b = local.gradient.layers[k].values;
      for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    const double gap = std::sqrt(s);
    out.device_gap_norm.push_back(gap);
    const bool on = selected.empty() || selected[m] != 0;
    const double n = static_cast<double>(part.samples(m));
    weight_total += n;
    if (on) weighted += n * gap;
  }
  out.epsilon = weight_total > 0.0 ? weighted / weight_total : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Regression of the bound constants

// Parameter vector order used by the estimator.
enum ParamIndex : std::size_t { kSmooth = 0, kZeta1 = 1, kZeta2 = 2, kBeps = 3, kUps = 4, kParamCount = 5 };
using ParamVector = std::array<double, kParamCount>;

inline ParamVector to_vector(const BoundParams& p) {
  return {p.smoothness(), p.zeta1, p.zeta2, p.Beps2, p.Ups4M2};
}

inline BoundParams from_vector(const ParamVector& v, BoundMode mode, const BoundParams& base = {}) {
  BoundParams p = base;
  p.mode = mode;
  if (mode == BoundMode::convex) {
    p.L = v[kSmooth];
  } else {
    p.Lgamma = v[kSmooth];
    p.Ups4M2 = v[kUps];
  }
  p.zeta1 = v[kZeta1];
  p.zeta2 = v[kZeta2];
  p.Beps2 = v[kBeps];
  return p;
}

inline double regression_loss(const BoundParams& p, std::span<const TransitionRecord> buffer) {
  if (buffer.empty()) throw ArgumentError("regression_loss: empty buffer");
  double s = 0.0;
  for (const auto& r : buffer) {
    const double resid = (r.F_next - r.F_t) - bound_step(r.features(), p);
    s += resid * resid;
  }
  return s / static_cast<double>(buffer.size());
}

// Closed-form partial derivatives of the bound w.r.t. each constant.
inline ParamVector bound_step_gradient(const BoundFeatures& f, const BoundParams& p) {
  const double L = p.smoothness();
  const double E = quant_error_norm(f.alpha, f.M, f.V);
  const double gap = f.N - f.A;
  const double sel = 4.0 * gap * gap / (f.N * f.N);
  // bound = P / (2L) + L E (E + 1) / 2 + E^2 [+ Ups / (2L)]
  double P = -f.grad_norm_sq + sel * (E + 1.0) * p.zeta2 * f.grad_norm_sq +
             sel * (E + 1.0) * (p.zeta1 + p.Beps2);
  if (p.mode == BoundMode::nonconvex) P += p.Ups4M2;
  ParamVector g{};
  g[kSmooth] = -P / (2.0 * L * L) + E * (E + 1.0) / 2.0;
  g[kZeta1] = sel * (E + 1.0) / (2.0 * L);
  g[kZeta2] = sel * (E + 1.0) * f.grad_norm_sq / (2.0 * L);
  g[kBeps] = g[kZeta1];
  g[kUps] = p.mode == BoundMode::nonconvex ? 1.0 / (2.0 * L) : 0.0;
  return g;
}

inline ParamVector regression_gradient(const BoundParams& p, std::span<const TransitionRecord> buffer) {
  if (buffer.empty()) throw ArgumentError("regression_gradient: empty buffer");
  ParamVector g{};
  for (const auto& r : buffer) {
    const auto f = r.features();
    const double resid = (r.F_next - r.F_t) - bound_step(f, p);
    const auto dk = bound_step_gradient(f, p);
    for (std::size_t i = 0; i < kParamCount; ++i) g[i] -= 2.0 * resid * dk[i];
  }
  for (double& v : g) v /= static_cast<double>(buffer.size());
  return g;
}

// Central differences of regression_loss; used to cross-check the closed form.
inline ParamVector regression_gradient_numeric(const BoundParams& p,
                                               std::span<const TransitionRecord> buffer,
                                               double rel_step = 1e-6) {
  ParamVector g{};
  const ParamVector x = to_vector(p);
  for (std::size_t i = 0; i < kParamCount; ++i) {
    if (p.mode == BoundMode::convex && i == kUps) continue;
    const double h = rel_step * std::max(1.0, std::abs(x[i]));
    ParamVector hi = x, lo = x;
    hi[i] += h;
    lo[i] -= h;
    g[i] = (regression_loss(from_vector(hi, p.mode, p), buffer) -
            regression_loss(from_vector(lo, p.mode, p), buffer)) /
           (2.0 * h);
  }
  return g;
}

struct EstimatorRates {
  double L = 0.02;
  double zeta1 = 0.02;
  double zeta2 = 0.02;
  double Beps2 = 0.02;
  double Ups = 0.02;
};

struct EstimatorOptions {
  EstimatorRates rates;
  std::size_t steps = 20000;
  std::size_t restarts = 8;
  std::uint64_t seed = 0;
  std::size_t divergence_patience = 100;
  double tolerance = 1e-14;  // stop once the loss falls below this
};

inline constexpr double kMinSmoothness = 1e-6;

struct EstimateResult {
  BoundParams params;
  double loss = 0.0;
  std::size_t steps = 0;
};

// Fixed-step projected gradient descent on the regression loss from `init`.
inline EstimateResult estimate_params(std::span<const TransitionRecord> buffer,
                                      const EstimatorOptions& opt, const BoundParams& init) {
  if (buffer.empty()) throw ArgumentError("estimate_params: empty transition buffer");
  const auto& r = opt.rates;
  for (double rate : {r.L, r.zeta1, r.zeta2, r.Beps2, r.Ups}) {
    if (!(rate > 0.0)) throw ArgumentError("estimate_params: learning rates must be > 0");
  }
  const ParamVector rate{r.L, r.zeta1, r.zeta2, r.Beps2, r.Ups};
  const BoundMode mode = init.mode;

  ParamVector x = to_vector(init);
  auto project = [&](ParamVector& v) {
    v[kSmooth] = std::max(v[kSmooth], kMinSmoothness);
    for (std::size_t i = 1; i < kParamCount; ++i) v[i] = std::max(v[i], 0.0);
    if (mode == BoundMode::convex) v[kUps] = 0.0;
  };
  project(x);

  double loss = regression_loss(from_vector(x, mode, init), buffer);
  const double start_loss = loss;
  std::size_t rising = 0;
  std::size_t step = 0;
  for (; step < opt.steps && loss > opt.tolerance; ++step) {
    const ParamVector g = regression_gradient(from_vector(x, mode, init), buffer);
    for (std::size_t i = 0; i < kParamCount; ++i) x[i] -= rate[i] * g[i];
    project(x);
    const double next = regression_loss(from_vector(x, mode, init), buffer);
    if (!std::isfinite(next)) {
      throw EstimationFailure("estimate_params: loss became non-finite; try smaller learning rates");
    }
    rising = next > loss ? rising + 1 : 0;
    if (rising >= opt.divergence_patience) {
      throw EstimationFailure("estimate_params: loss increased for " +
                              std::to_string(opt.divergence_patience) +
                              " consecutive steps; try smaller learning rates");
    }
    loss = next;
  }
  // Overshooting steps can park the fit on the projection boundary, where the
  // loss stops rising but sits far above where it started.
  if (loss > start_loss) {
    throw EstimationFailure("estimate_params: final loss above the starting loss; try smaller learning rates");
  }
  return {from_vector(x, mode, init), loss, step};
}

// Runs `restarts` fits (the first from `init`, the rest from `init` scaled
// by 10^U(-1,1) per constant) and keeps the lowest-loss fit.
inline EstimateResult estimate_params_restarts(std::span<const TransitionRecord> buffer,
                                               const EstimatorOptions& opt,
                                               const BoundParams& init) {
  if (buffer.empty()) throw ArgumentError("estimate_params: empty transition buffer");
  Rng rng = make_rng(opt.seed, Stream::estimation);
  std::uniform_real_distribution<double> exponent(-1.0, 1.0);
  EstimateResult best;
  best.loss = std::numeric_limits<double>::infinity();
  std::string last_error;
  const std::size_t runs = std::max<std::size_t>(1, opt.restarts);
  for (std::size_t k = 0; k < runs; ++k) {
    BoundParams start = init;
    if (k > 0) {
      ParamVector v = to_vector(init);
      for (double& x : v) x *= std::pow(10.0, exponent(rng));
      start = from_vector(v, init.mode, init);
    }
    try {
      auto fit = estimate_params(buffer, opt, start);
      if (fit.loss < best.loss) best = fit;
    } catch (const EstimationFailure& e) {
      last_error = e.what();
    }
  }
  if (!std::isfinite(best.loss)) throw EstimationFailure("all restarts failed: " + last_error);
  return best;
}

// ---------------------------------------------------------------------------
// Learned transition model

struct PredictedTransition {
  double F_next = 0.0;
  std::size_t bin = 0;
  double probability = 1.0;
};

// Uniform loss bins on [0, f_max]; values at or above f_max land in the top bin.
inline std::size_t loss_bin(double F, std::size_t levels, double f_max) {
  if (F <= 0.0) return 0;
  const auto b = static_cast<std::size_t>(F / f_max * static_cast<double>(levels));
  return std::min(b, levels - 1);
}

// Deterministic transition: all mass on the bin of F_t + bound, clamped at 0.
inline PredictedTransition predict_next_state(double F_t, const BoundFeatures& f,
                                              const BoundParams& p, std::size_t levels,
                                              double f_max) {
  const double next = std::max(0.0, F_t + bound_step(f, p));
  return {next, loss_bin(next, levels, f_max), 1.0};
}

inline std::vector<double> transition_distribution(const PredictedTransition& t, std::size_t levels) {
  std::vector<double> p(levels, 0.0);
  p[t.bin] = t.probability;
  return p;
}

}  // namespace bwfl
