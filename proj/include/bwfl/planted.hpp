#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bwfl/action.hpp"
#include "bwfl/bound.hpp"
#include "bwfl/error.hpp"
#include "bwfl/federation.hpp"
#include "bwfl/random.hpp"
#include "bwfl/wireless.hpp"

namespace bwfl {

struct PlantedSetup {
  std::vector<std::size_t> sample_counts;
  std::vector<DeviceProfile> profiles;
  ChannelModel channel{1e-3, 1.0, false};
  NetworkConfig net;
  BoundParams params;
  double kappa = 1.0;          // ||grad F||^2 = kappa * F
  double initial_loss = 2.0;
  double restart_below = 0.0;  // once F <= this, the next round starts again from initial_loss
  std::uint64_t seed = 0;
};

// A stand-in for the federated system whose loss moves exactly by the bound
// with known constants. Same interface as FLEnvironment, so schedulers can be
// checked against a ground truth.
class PlantedEnvironment {
 public:
  explicit PlantedEnvironment(PlantedSetup setup) : s_(std::move(setup)), F_(s_.initial_loss) {
    const std::size_t M = s_.sample_counts.size();
    if (M == 0) throw ArgumentError("PlantedEnvironment: no devices");
    if (s_.profiles.size() != M) throw ShapeError("PlantedEnvironment: one device profile per device required");
    if (!(s_.initial_loss > 0.0)) throw ArgumentError("PlantedEnvironment: initial loss must be > 0");
    check_params(s_.params);
    for (auto n : s_.sample_counts) total_ += static_cast<double>(n);
    for (std::size_t m = 0; m < M; ++m) channel_rng_.push_back(make_rng(s_.seed, Stream::channel, m));
    draw_channels();
  }

  std::size_t num_devices() const { return s_.sample_counts.size(); }
  int V() const { return s_.net.full_precision_bits; }
  const NetworkConfig& net() const { return s_.net; }
  const std::vector<DeviceProfile>& profiles() const { return s_.profiles; }
  const ChannelModel& channel() const { return s_.channel; }
  const std::vector<double>& gains() const { return gains_; }
  const std::vector<std::size_t>& sample_counts() const { return s_.sample_counts; }
  double total_samples() const { return total_; }
  double loss() const { return F_; }
  double initial_loss() const { return s_.initial_loss; }
  double grad_norm_sq() const { return s_.kappa * F_; }
  std::size_t rounds() const { return rounds_; }
  const PlantedSetup& setup() const { return s_; }

  BoundFeatures features(const Action& a) const {
    BoundFeatures f;
    f.grad_norm_sq = grad_norm_sq();
    for (std::size_t m = 0; m < a.u.size(); ++m)
      if (a.u[m]) f.A += static_cast<double>(s_.sample_counts[m]);
    f.N = total_;
    f.alpha = a.alpha;
    f.M = num_devices();
    f.V = V();
    return f;
  }

  // Planted one-step change for `a` from the current state.
  double planted_step(const Action& a) const { return bound_step(features(a), s_.params); }

  FLRoundResult step(const Action& a) {
    if (a.u.size() != num_devices()) throw ShapeError("step: selection vector length must equal M");
    if (a.selected_count() == 0) throw EmptySelection("step: no device selected");
    const Verdict v = feasible(a, s_.profiles, gains_, s_.net);
    if (!v) {
      throw InfeasibleAction(std::string("step: action violates the ") + to_string(v.violation) +
                             " constraint");
    }
    FLRoundResult r;
    r.round = ++rounds_;
    r.action = a;
    r.delay = v.delay;
    r.loss_before = F_;
    r.grad_norm_sq_before = grad_norm_sq();
    const double next = std::max(0.0, F_ + planted_step(a));
    r.loss = next;
    r.loss_selected = next;
    F_ = next <= s_.restart_below ? s_.initial_loss : next;
    r.grad_norm_sq = s_.kappa * next;
    draw_channels();
    return r;
  }

 private:
  void draw_channels() {
    gains_.resize(num_devices());
    for (std::size_t m = 0; m < num_devices(); ++m) {
      gains_[m] = channel_gain(s_.profiles[m], s_.channel, channel_rng_[m]);
    }
  }

  PlantedSetup s_;
  double F_;
  double total_ = 0.0;
  std::vector<Rng> channel_rng_;
  std::vector<double> gains_;
  std::size_t rounds_ = 0;
};

// Every nonempty feasible action for the current channel, drawn from the
// given bitwidths.
template <typename Env>
std::vector<Action> enumerate_feasible_actions(const Env& env, std::span<const int> bitwidths) {
  std::vector<Action> out;
  const std::size_t M = env.num_devices();
  if (M >= 31) throw ArgumentError("enumerate_feasible_actions: too many devices to enumerate");
  for (std::uint32_t mask = 1; mask < (std::uint32_t{1} << M); ++mask) {
    Action a;
    a.u.resize(M);
    for (std::size_t m = 0; m < M; ++m) a.u[m] = (mask >> m) & 1u;
    for (int alpha : bitwidths) {
      a.alpha = alpha;
      if (feasible(a, env.profiles(), env.gains(), env.net())) out.push_back(a);
    }
  }
  return out;
}

}  // namespace bwfl
