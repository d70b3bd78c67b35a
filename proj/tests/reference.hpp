#pragma once

// Plain-loop reference implementations used as oracles. They share nothing
// with the library beyond the data containers, and perform floating-point
// operations in the same order so full-precision results can be compared
// bit for bit.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "bwfl/datasets.hpp"

namespace ref {

using Weights = std::vector<std::vector<double>>;  // per layer, row-major [out][in]

struct Net {
  std::vector<std::size_t> dims;
  Weights w;
};

inline double gain(std::size_t fan_in) { return 2.0 / std::sqrt(static_cast<double>(fan_in)); }

struct Pass {
  std::vector<std::vector<double>> in;   // layer inputs
  std::vector<std::vector<double>> pre;  // pre-activations
  std::vector<double> out;
};

inline Pass forward(const Net& n, const double* x) {
  Pass p;
  std::vector<double> h(x, x + n.dims[0]);
  const std::size_t K = n.w.size();
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t I = n.dims[k], O = n.dims[k + 1];
    std::vector<double> z(O), a(O);
    for (std::size_t o = 0; o < O; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < I; ++i) s += n.w[k][o * I + i] * h[i];
      z[o] = gain(I) * s;
      if (k + 1 < K) {
        a[o] = z[o] > 1.0 ? 1.0 : (z[o] < -1.0 ? -1.0 : z[o]);
      } else {
        a[o] = 1.0 / (1.0 + std::exp(-z[o]));
      }
    }
    p.in.push_back(h);
    p.pre.push_back(z);
    h = a;
  }
  p.out = h;
  return p;
}

inline double bce(const std::vector<double>& h, int label) {
  double l = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double y = static_cast<int>(i) == label ? 1.0 : 0.0;
    const double p = std::min(std::max(h[i], 1e-12), 1.0 - 1e-12);
    l -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return l;
}

// Adds the sample gradient into g; returns the sample loss.
inline double backprop(const Net& n, const double* x, int label, Weights& g) {
  const Pass p = forward(n, x);
  const std::size_t K = n.w.size();
  std::vector<double> delta(p.out.size());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = p.out[i] - (static_cast<int>(i) == label ? 1.0 : 0.0);
  for (std::size_t k = K; k-- > 0;) {
    const std::size_t I = n.dims[k], O = n.dims[k + 1];
    for (std::size_t o = 0; o < O; ++o) {
      const double d = gain(I) * delta[o];
      for (std::size_t i = 0; i < I; ++i) g[k][o * I + i] += d * p.in[k][i];
    }
    if (k == 0) break;
    std::vector<double> back(I, 0.0);
    for (std::size_t o = 0; o < O; ++o) {
      const double d = gain(I) * delta[o];
      for (std::size_t i = 0; i < I; ++i) back[i] += n.w[k][o * I + i] * d;
    }
    for (std::size_t i = 0; i < I; ++i) back[i] *= std::abs(p.pre[k - 1][i]) <= 1.0 ? 1.0 : 0.0;
    delta = back;
  }
  return bce(p.out, label);
}

inline Weights zeros_like(const Weights& w) {
  Weights z;
  for (const auto& l : w) z.emplace_back(l.size(), 0.0);
  return z;
}

// Unquantized federated averaging: every selected device takes one summed-
// gradient step from the global model over its whole local set, and the
// server averages the results weighted by sample count.
inline Net fedavg_round(const Net& global, const bwfl::Dataset& ds,
                        const std::vector<std::vector<std::size_t>>& devices,
                        const std::vector<std::uint8_t>& selected, double lambda) {
  double A = 0.0;
  for (std::size_t m = 0; m < devices.size(); ++m)
    if (selected[m]) A += static_cast<double>(devices[m].size());
  Net next = global;
  next.w = zeros_like(global.w);
  for (std::size_t m = 0; m < devices.size(); ++m) {
    if (!selected[m]) continue;
    Weights g = zeros_like(global.w);
    for (std::size_t idx : devices[m]) backprop(global, ds.features.data() + idx * ds.dim, ds.labels[idx], g);
    const double weight = static_cast<double>(devices[m].size()) / A;
    for (std::size_t k = 0; k < g.size(); ++k) {
      for (std::size_t i = 0; i < g[k].size(); ++i) {
        const double local = global.w[k][i] - lambda * g[k][i];
        next.w[k][i] += weight * local;
      }
    }
  }
  return next;
}

inline double mean_loss(const Net& n, const bwfl::Dataset& ds, const std::vector<std::size_t>& idx) {
  double s = 0.0;
  for (std::size_t i : idx) s += bce(forward(n, ds.features.data() + i * ds.dim).out, ds.labels[i]);
  return s / static_cast<double>(idx.size());
}

}  // namespace ref
