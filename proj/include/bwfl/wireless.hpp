#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bwfl/action.hpp"
#include "bwfl/error.hpp"
#include "bwfl/random.hpp"

namespace bwfl {

struct DeviceProfile {
  double rho = 2.8e6;           // time-consumption coefficient
  double cpu_hz = 3.3e9;        // f
  double bits_per_cycle = 64;   // vartheta
  double distance_m = 100.0;
  double tx_power_w = 0.5;      // P
};

// Path loss g0 (d / d0)^-2 times unit-mean exponential power fading.
struct ChannelModel {
  double path_gain_ref = 1e-3;  // g0
  double ref_distance_m = 1.0;  // d0
  bool rayleigh = true;
};

struct NetworkConfig {
  std::size_t rb_count = 6;          // U
  double delay_budget_s = 1.0;       // Gamma
  double model_size = 217728;        // D, parameters transmitted
  double mult_ops = 217728;          // N^C
  double bandwidth_hz = 15e3;        // W
  double noise_w = 3.981071705534969e-21;  // sigma^2 = -174 dBm
  int full_precision_bits = 32;      // V
};

inline double dbm_to_watts(double dbm) { return std::pow(10.0, dbm / 10.0 - 3.0); }

inline double mean_channel_gain(const DeviceProfile& p, const ChannelModel& ch) {
  const double ratio = p.distance_m / ch.ref_distance_m;
  return ch.path_gain_ref / (ratio * ratio);
}

inline double channel_gain(const DeviceProfile& p, const ChannelModel& ch, double fading) {
  if (!(p.distance_m > 0.0)) throw ArgumentError("channel_gain: distance must be > 0");
  return mean_channel_gain(p, ch) * fading;
}

inline double channel_gain(const DeviceProfile& p, const ChannelModel& ch, Rng& rng) {
  const double fading = ch.rayleigh ? std::exponential_distribution<double>(1.0)(rng) : 1.0;
  return channel_gain(p, ch, fading);
}

// Uplink capacity of one RB, bits/s.
inline double capacity(bool u, double h, double W, double P, double sigma2) {
  if (!u) return 0.0;
  return W * std::log2(1.0 + P * h / sigma2);
}

inline double delay_compute(int alpha, const DeviceProfile& p, double mult_ops) {
  if (alpha < 1) throw InvalidBitwidth("delay_compute: bitwidth must be >= 1");
  const double a = alpha;
  return p.rho * a * a * mult_ops / (p.bits_per_cycle * p.cpu_hz);
}

inline double delay_quantize(int alpha, int V, double model_size, const DeviceProfile& p) {
  if (alpha < 1 || alpha > V) throw InvalidBitwidth("delay_quantize: bitwidth outside [1, V]");
  if (alpha == 1 || alpha == V) return 0.0;
  return model_size / (p.bits_per_cycle * p.cpu_hz);
}

inline double delay_transmit(bool u, int alpha, double model_size, double c) {
  if (!u) return 0.0;
  if (!(c > 0.0)) throw InfeasibleLink("delay_transmit: selected device has zero capacity");
  return model_size * alpha / c;
}

// l^C + l^Q + l^T for one selected device.
inline double device_delay(int alpha, const DeviceProfile& p, double h, const NetworkConfig& net) {
  const double c = capacity(true, h, net.bandwidth_hz, p.tx_power_w, net.noise_w);
  return delay_compute(alpha, p, net.mult_ops) +
         delay_quantize(alpha, net.full_precision_bits, net.model_size, p) +
         delay_transmit(true, alpha, net.model_size, c);
}

// Round latency: the slowest selected device; zero with nobody selected.
inline double iteration_delay(const Action& a, std::span<const DeviceProfile> profiles,
                              std::span<const double> gains, const NetworkConfig& net) {
  if (a.u.size() != profiles.size() || gains.size() != profiles.size()) {
    throw ShapeError("iteration_delay: selection, profile and gain vectors differ in length");
  }
  double worst = 0.0;
  for (std::size_t m = 0; m < a.u.size(); ++m) {
    if (a.u[m]) worst = std::max(worst, device_delay(a.alpha, profiles[m], gains[m], net));
  }
  return worst;
}

enum class Violation { none, rb_budget, bitwidth, delay };

inline const char* to_string(Violation v) {
  switch (v) {
    case Violation::none: return "none";
    case Violation::rb_budget: return "rb-budget";
    case Violation::bitwidth: return "bitwidth";
    case Violation::delay: return "delay";
  }
  return "?";
}

struct Verdict {
  bool ok = true;
  Violation violation = Violation::none;
  double delay = 0.0;

  explicit operator bool() const { return ok; }
};

// Checks sum(u) <= U, alpha in [1, V] and round delay <= Gamma (inclusive).
inline Verdict feasible(const Action& a, std::span<const DeviceProfile> profiles,
                        std::span<const double> gains, const NetworkConfig& net) {
  if (a.selected_count() > net.rb_count) return {false, Violation::rb_budget, 0.0};
  if (a.alpha < 1 || a.alpha > net.full_precision_bits) return {false, Violation::bitwidth, 0.0};
  const double d = iteration_delay(a, profiles, gains, net);
  if (d > net.delay_budget_s) return {false, Violation::delay, d};
  return {true, Violation::none, d};
}

// Makes an action feasible: drop the selected device with the largest delay
// until the budget holds; once a single device remains, step alpha down the
// ladder (or by one when no ladder is given). An empty selection has nothing
// to repair and is rejected.
inline Action repair(Action a, std::span<const DeviceProfile> profiles,
                     std::span<const double> gains, const NetworkConfig& net,
                     std::span<const int> ladder = {}) {
  if (a.selected_count() == 0) throw EmptySelection("repair: no device selected");
  a.alpha = std::clamp(a.alpha, 1, net.full_precision_bits);
  auto drop_slowest = [&] {
    std::size_t worst = a.u.size();
    double worst_delay = -1.0;
    for (std::size_t m = 0; m < a.u.size(); ++m) {
      if (!a.u[m]) continue;
      const double d = device_delay(a.alpha, profiles[m], gains[m], net);
      if (d > worst_delay) {
        worst_delay = d;
        worst = m;
      }
    }
    a.u[worst] = 0;
  };
  while (a.selected_count() > net.rb_count) drop_slowest();
  for (;;) {
    if (feasible(a, profiles, gains, net)) return a;
    if (a.selected_count() > 1) {
      drop_slowest();
      continue;
    }
    int lower = a.alpha - 1;
    if (!ladder.empty()) {
      lower = 0;
      for (int b : ladder)
        if (b < a.alpha) lower = std::max(lower, b);
    }
    if (lower < 1) {
      throw EnvironmentInfeasible("no feasible action: even a single device at bitwidth " +
                                  std::to_string(a.alpha) + " exceeds the delay budget");
    }
    a.alpha = lower;
  }
}

}  // namespace bwfl
