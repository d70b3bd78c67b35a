#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bwfl/action.hpp"
#include "bwfl/datasets.hpp"
#include "bwfl/error.hpp"
#include "bwfl/qnn.hpp"
#include "bwfl/random.hpp"
#include "bwfl/wireless.hpp"

namespace bwfl {

// Sample-weighted mean of the selected devices' uploaded models, reduced in
// device index order.
inline ModelParams aggregate(std::span<const QuantizedModel> local_models,
                             std::span<const std::uint8_t> u, std::span<const std::size_t> n_samples) {
  if (local_models.size() != u.size() || n_samples.size() != u.size()) {
    throw ShapeError("aggregate: models, selection and sample counts differ in length");
  }
  double A = 0.0;
  std::size_t first = u.size();
  for (std::size_t m = 0; m < u.size(); ++m) {
    if (!u[m]) continue;
    A += static_cast<double>(n_samples[m]);
    if (first == u.size()) first = m;
  }
  if (first == u.size()) throw EmptySelection("aggregate: no device selected");
  if (!(A > 0.0)) throw EmptySelection("aggregate: selected devices hold no samples");

  const QuantizedModel& shape = local_models[first];
  ModelParams g;
  g.layer_dims = shape.layer_dims;
  g.V = shape.V;
  for (const auto& l : shape.layers) g.layers.emplace_back(l.rows, l.cols);
  for (std::size_t m = 0; m < u.size(); ++m) {
    if (!u[m]) continue;
    const auto& w = local_models[m];
    if (w.layers.size() != g.layers.size()) throw ShapeError("aggregate: layer count mismatch");
    const double weight = static_cast<double>(n_samples[m]) / A;
    for (std::size_t k = 0; k < g.layers.size(); ++k) {
      auto& dst = g.layers[k].values;
      const auto& src = w.layers[k].values;
      if (src.size() != dst.size()) throw ShapeError("aggregate: layer " + std::to_string(k) + " shape mismatch");
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += weight * src[i];
    }
  }
  return g;
}

// Mean per-sample cross-entropy of the full-precision model.
inline double global_loss(const ModelParams& model, const Dataset& ds,
                          std::span<const std::size_t> indices) {
  if (indices.empty()) throw ArgumentError("global_loss: no samples");
  QuantizedModel passthrough{model.layers, model.layer_dims, model.V, model.V};
  const QuantizedForward net(passthrough);
  double s = 0.0;
  for (std::size_t i : indices) {
    const auto acts = net(ds.input(i));
    s += cross_entropy(acts.output(), one_hot(ds.labels[i], acts.output().size()));
  }
  return s / static_cast<double>(indices.size());
}

struct FLRoundResult {
  std::size_t round = 0;          // 1-based
  Action action;
  double delay = 0.0;             // seconds
  double loss_before = 0.0;       // F(g_{t-1})
  double grad_norm_sq_before = 0.0;
  double loss = 0.0;              // F(g_t) over all device data
  double loss_selected = 0.0;     // selected devices' mean local loss under the broadcast model
  double grad_norm_sq = 0.0;      // ||grad F(g_t)||^2
  double test_accuracy = 0.0;     // quantized global model on the hold-out
  ModelParams global_model;
  QuantizedModel quantized_global;
};

struct FLSetup {
  std::shared_ptr<const Dataset> data;
  DevicePartition partition;
  std::vector<std::size_t> test_indices;
  std::vector<std::size_t> layer_dims;
  std::vector<DeviceProfile> profiles;
  ChannelModel channel;
  NetworkConfig net;
  double lambda = 1e-3;
  std::size_t minibatch = 0;  // 0 = each device's full local set, in stored order
  std::uint64_t seed = 0;
};

// The real federated system: owns the global model, the channel process and
// the per-device data. One step() is one training round.
class FLEnvironment {
 public:
  explicit FLEnvironment(FLSetup setup) : s_(std::move(setup)) {
    if (!s_.data) throw ArgumentError("FLEnvironment: no dataset");
    const std::size_t M = s_.partition.num_devices();
    if (M == 0) throw ArgumentError("FLEnvironment: no devices");
    if (s_.profiles.size() != M) throw ShapeError("FLEnvironment: one device profile per device required");
    if (s_.layer_dims.empty() || s_.layer_dims.front() != s_.data->dim ||
        s_.layer_dims.back() != s_.data->num_classes) {
      throw ShapeError("FLEnvironment: layer widths must start at the input dim and end at the class count");
    }
    if (!(s_.lambda > 0.0)) throw ArgumentError("FLEnvironment: learning rate must be > 0");
    for (std::size_t m = 0; m < M; ++m) {
      if (s_.partition.samples(m) == 0) throw PartitionError("device " + std::to_string(m) + " holds no samples");
      if (s_.minibatch > s_.partition.samples(m)) {
        throw ArgumentError("minibatch " + std::to_string(s_.minibatch) + " exceeds device " +
                            std::to_string(m) + "'s " + std::to_string(s_.partition.samples(m)) + " samples");
      }
    }

    Rng init = make_rng(s_.seed, Stream::init);
    g_ = init_model(s_.layer_dims, s_.net.full_precision_bits, init);
    train_ = s_.partition.all_indices();
    for (std::size_t m = 0; m < M; ++m) {
      counts_.push_back(s_.partition.samples(m));
      channel_rng_.push_back(make_rng(s_.seed, Stream::channel, m));
      batch_rng_.push_back(make_rng(s_.seed, Stream::minibatch, m));
    }
    const auto lg = loss_and_gradient(g_, *s_.data, train_);
    loss_ = lg.loss;
    grad_norm_sq_ = squared_norm(lg.gradient);
    initial_loss_ = loss_;
    draw_channels();
  }

  std::size_t num_devices() const { return counts_.size(); }
  int V() const { return s_.net.full_precision_bits; }
  const NetworkConfig& net() const { return s_.net; }
  const std::vector<DeviceProfile>& profiles() const { return s_.profiles; }
  const ChannelModel& channel() const { return s_.channel; }
  const std::vector<double>& gains() const { return gains_; }
  const std::vector<std::size_t>& sample_counts() const { return counts_; }
  double total_samples() const { return static_cast<double>(train_.size()); }
  double loss() const { return loss_; }
  double initial_loss() const { return initial_loss_; }
  double grad_norm_sq() const { return grad_norm_sq_; }
  const ModelParams& global_model() const { return g_; }
  std::size_t rounds() const { return rounds_; }
  const FLSetup& setup() const { return s_; }

  Verdict check(const Action& a) const { return feasible(a, s_.profiles, gains_, s_.net); }

  FLRoundResult step(const Action& a) {
    if (a.u.size() != num_devices()) throw ShapeError("step: selection vector length must equal M");
    if (a.selected_count() == 0) throw EmptySelection("step: no device selected");
    const Verdict v = check(a);
    if (!v) {
      throw InfeasibleAction(std::string("step: action violates the ") + to_string(v.violation) +
                             " constraint");
    }

    FLRoundResult r;
    r.round = ++rounds_;
    r.action = a;
    r.delay = v.delay;
    r.loss_before = loss_;
    r.grad_norm_sq_before = grad_norm_sq_;

    const QuantizedModel g_hat = quantize(g_, a.alpha);
    std::vector<QuantizedModel> uploads(num_devices());
    double loss_sum = 0.0;
    double A = 0.0;
    for (std::size_t m = 0; m < num_devices(); ++m) {
      if (!a.u[m]) continue;
      const std::vector<std::size_t> batch =
          s_.minibatch == 0 ? s_.partition.devices[m]
                            : sample_minibatch(s_.partition, m, s_.minibatch, batch_rng_[m]);
      LocalUpdate local = local_update(g_, g_hat, *s_.data, batch, s_.lambda);
      loss_sum += local.loss_sum;
      A += static_cast<double>(batch.size());
      uploads[m] = quantize(local.model, a.alpha);
    }
    g_ = aggregate(uploads, a.u, counts_);
    r.quantized_global = quantize(g_, a.alpha);

    const auto lg = loss_and_gradient(g_, *s_.data, train_);
    loss_ = lg.loss;
    grad_norm_sq_ = squared_norm(lg.gradient);
    if (!std::isfinite(loss_)) throw NumericError("step: global loss is not finite");
    r.loss = loss_;
    r.grad_norm_sq = grad_norm_sq_;
    r.loss_selected = loss_sum / A;
    r.test_accuracy = accuracy(r.quantized_global, *s_.data, s_.test_indices);
    r.global_model = g_;

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

  FLSetup s_;
  ModelParams g_;
  std::vector<std::size_t> train_;
  std::vector<std::size_t> counts_;
  std::vector<Rng> channel_rng_;
  std::vector<Rng> batch_rng_;
  std::vector<double> gains_;
  double loss_ = 0.0;
  double initial_loss_ = 0.0;
  double grad_norm_sq_ = 0.0;
  std::size_t rounds_ = 0;
};

// Stops training once the population variance of the last `window` losses
// drops below `threshold`.
class ConvergenceMonitor {
 public:
  explicit ConvergenceMonitor(std::size_t window = 20, double threshold = 1e-3)
      : window_(window), threshold_(threshold) {
    if (window_ < 2) throw ArgumentError("convergence window must be >= 2");
  }

  bool push(double loss) {
    recent_.push_back(loss);
    if (recent_.size() > window_) recent_.pop_front();
    return converged();
  }

  bool converged() const { return recent_.size() == window_ && variance() < threshold_; }

  double variance() const {
    if (recent_.empty()) return 0.0;
    const double n = static_cast<double>(recent_.size());
    const double mean = std::accumulate(recent_.begin(), recent_.end(), 0.0) / n;
    double s = 0.0;
    for (double x : recent_) s += (x - mean) * (x - mean);
    return s / n;
  }

  std::size_t window() const { return window_; }
  double threshold() const { return threshold_; }

 private:
  std::size_t window_;
  double threshold_;
  std::deque<double> recent_;
};

// Picks `count` distinct devices uniformly at random.
inline std::vector<std::uint8_t> random_subset(std::size_t M, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(M);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  count = std::min(count, M);
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> d(i, M - 1);
    std::swap(idx[i], idx[d(rng)]);
  }
  std::vector<std::uint8_t> u(M, 0);
  for (std::size_t i = 0; i < count; ++i) u[idx[i]] = 1;
  return u;
}

// Baselines: U random devices at a fixed bitwidth, repaired to feasibility.
// Repair may lower alpha along `ladder` when even one device misses the budget.
template <typename Env>
Action fixed_bitwidth_action(const Env& env, int alpha, Rng& rng, std::span<const int> ladder = {}) {
  Action a{random_subset(env.num_devices(), env.net().rb_count, rng), alpha};
  return repair(std::move(a), env.profiles(), env.gains(), env.net(), ladder);
}

// Random exploration action: subset size uniform in 1..U, alpha uniform over
// `bitwidths`, then repaired.
template <typename Env>
Action random_action(const Env& env, std::span<const int> bitwidths, Rng& rng) {
  if (bitwidths.empty()) throw ArgumentError("random_action: empty bitwidth set");
  const std::size_t cap = std::min(env.net().rb_count, env.num_devices());
  std::uniform_int_distribution<std::size_t> size(1, cap);
  std::uniform_int_distribution<std::size_t> pick(0, bitwidths.size() - 1);
  const std::size_t k = size(rng);
  const int alpha = bitwidths[pick(rng)];
  Action a{random_subset(env.num_devices(), k, rng), alpha};
  return repair(std::move(a), env.profiles(), env.gains(), env.net(), bitwidths);
}

struct TrainingOptions {
  std::size_t max_rounds = 100;  // T
  std::size_t window = 20;
  double variance_threshold = 1e-3;
  bool stop_on_convergence = true;
};

struct TrainingHistory {
  std::vector<FLRoundResult> rounds;
  std::size_t converged_at = 0;  // round index; 0 = never
};

// Runs up to max_rounds rounds with actions from `scheduler(env)`.
template <typename Env, typename Scheduler>
TrainingHistory run_training(Env& env, Scheduler&& scheduler, const TrainingOptions& opt) {
  TrainingHistory h;
  ConvergenceMonitor monitor(opt.window, opt.variance_threshold);
  for (std::size_t t = 0; t < opt.max_rounds; ++t) {
    h.rounds.push_back(env.step(scheduler(env)));
    if (monitor.push(h.rounds.back().loss) && h.converged_at == 0) {
      h.converged_at = h.rounds.back().round;
      if (opt.stop_on_convergence) break;
    }
  }
  return h;
}

}  // namespace bwfl
