#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bwfl/config.hpp"
#include "bwfl/datasets.hpp"
#include "bwfl/federation.hpp"
#include "bwfl/qnn.hpp"
#include "bwfl/rl.hpp"
#include "bwfl/wireless.hpp"

namespace bwfl {

inline std::shared_ptr<const Dataset> load_dataset(const ExperimentConfig& c) {
  if (c.source == "synthetic") {
    return std::make_shared<const Dataset>(
        synthetic(c.synthetic_classes, c.synthetic_dim, c.synthetic_per_class, c.seed));
  }
  return std::make_shared<const Dataset>(load_idx(c.images, c.labels));
}

inline std::vector<std::size_t> layer_dims(const ExperimentConfig& c, const Dataset& ds) {
  std::vector<std::size_t> dims{ds.dim};
  for (int h : c.hidden) dims.push_back(static_cast<std::size_t>(h));
  dims.push_back(ds.num_classes);
  return dims;
}

inline std::size_t parameter_count(std::span<const std::size_t> dims) {
  std::size_t n = 0;
  for (std::size_t k = 0; k + 1 < dims.size(); ++k) n += dims[k] * dims[k + 1];
  return n;
}

// Devices placed uniformly over a disc around the server, at least
// min_distance away.
inline std::vector<DeviceProfile> place_devices(const ExperimentConfig& c, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::placement);
  const double r0 = c.min_distance / c.cell_radius;
  std::uniform_real_distribution<double> area(r0 * r0, 1.0);
  std::vector<DeviceProfile> out(c.devices);
  for (auto& p : out) {
    p.rho = c.rho;
    p.cpu_hz = c.cpu_hz;
    p.bits_per_cycle = c.bits_per_cycle;
    p.tx_power_w = c.tx_power;
    p.distance_m = c.cell_radius * std::sqrt(area(rng));
  }
  return out;
}

inline NetworkConfig network_config(const ExperimentConfig& c, std::size_t params) {
  NetworkConfig net;
  net.rb_count = c.rb_count;
  net.delay_budget_s = c.delay_budget;
  net.model_size = c.model_size > 0.0 ? c.model_size : static_cast<double>(params);
  net.mult_ops = c.mult_ops > 0.0 ? c.mult_ops : static_cast<double>(params);
  net.bandwidth_hz = c.bandwidth;
  net.noise_w = dbm_to_watts(c.noise_dbm);
  net.full_precision_bits = c.V;
  return net;
}

// Dataset, hold-out, partition, placement and model shape for one seed.
inline FLSetup make_setup(const ExperimentConfig& c, std::uint64_t seed,
                          std::shared_ptr<const Dataset> data = nullptr) {
  validate(c);
  if (!data) data = load_dataset(c);
  FLSetup s;
  s.data = data;
  const HoldoutSplit split = holdout_split(*data, c.test_fraction, seed);
  s.test_indices = split.test;
  PartitionSpec spec;
  spec.mode = c.partition == "iid" ? PartitionMode::iid : PartitionMode::noniid;
  spec.labels_per_device = c.labels_per_device;
  spec.samples_per_device = c.samples_per_device;
  s.partition = partition(*data, split.train, c.devices, spec, seed);
  s.layer_dims = layer_dims(c, *data);
  s.profiles = place_devices(c, seed);
  s.channel = ChannelModel{c.path_gain_ref, c.ref_distance, c.rayleigh};
  s.net = network_config(c, parameter_count(s.layer_dims));
  s.lambda = c.lambda;
  s.minibatch = c.minibatch;
  s.seed = seed;
  return s;
}

inline void fill_policy_options(const ExperimentConfig& c, std::uint64_t seed, PolicyTrainingOptions& o) {
  o.bitwidths = c.bitwidths;
  o.levels = c.levels;
  o.f_max = c.f_max;
  o.iota = c.iota;
  o.baseline = c.baseline;
  o.tie_equal_devices = c.tie_equal_devices;
  o.max_rounds = c.rounds;
  o.window = c.window;
  o.variance_threshold = c.variance_threshold;
  o.stop_on_convergence = c.stop_on_convergence;
  o.seed = seed;
}

inline EstimatorOptions estimator_options(const ExperimentConfig& c, std::uint64_t seed) {
  EstimatorOptions e;
  e.rates = {c.rate_L, c.rate_zeta1, c.rate_zeta2, c.rate_beps, c.rate_ups};
  e.steps = c.estimator_steps;
  e.restarts = c.restarts;
  e.seed = seed;
  return e;
}

inline ModelBasedOptions model_based_options(const ExperimentConfig& c, std::uint64_t seed) {
  ModelBasedOptions o;
  fill_policy_options(c, seed, o);
  o.explore_rounds = c.explore_rounds;
  o.planning_iterations = c.planning_iterations;
  o.trajectories_per_iteration = c.trajectories;
  o.horizon = c.horizon;
  o.reestimate_every = c.reestimate_every;
  o.estimator = estimator_options(c, seed);
  o.init.mode = bound_mode(c);
  return o;
}

inline ModelFreeOptions model_free_options(const ExperimentConfig& c, std::uint64_t seed) {
  ModelFreeOptions o;
  fill_policy_options(c, seed, o);
  o.episode_length = c.episode_length;
  return o;
}

// Baselines: U random devices per round at one bitwidth.
template <typename Env>
SchedulerRun run_fixed_bitwidth(Env& env, int alpha, const TrainingOptions& opt, std::uint64_t seed) {
  SchedulerRun run;
  Rng rng = make_rng(seed, Stream::scheduler);
  const std::vector<int> ladder{alpha};
  auto scheduler = [&](const Env& e) { return fixed_bitwidth_action(e, alpha, rng, ladder); };
  ConvergenceMonitor monitor(opt.window, opt.variance_threshold);
  for (std::size_t t = 0; t < opt.max_rounds; ++t) {
    FLRoundResult r = env.step(scheduler(env));
    const bool done = monitor.push(r.loss);
    append_round(run.rounds, {std::move(r), "train", t + 1, 0, std::nullopt});
    if (done && run.converged_at == 0) {
      run.converged_at = t + 1;
      if (opt.stop_on_convergence) break;
    }
  }
  return run;
}

inline int scheme_bitwidth(const ExperimentConfig& c) {
  switch (c.scheme) {
    case Scheme::binary: return 1;
    case Scheme::full_precision: return c.V;
    case Scheme::fixed: return c.fixed_alpha;
    default: return 0;
  }
}

inline TrainingOptions training_options(const ExperimentConfig& c) {
  return {c.rounds, c.window, c.variance_threshold, c.stop_on_convergence};
}

template <typename Env>
SchedulerRun run_scheme(Env& env, const ExperimentConfig& c, std::uint64_t seed) {
  switch (c.scheme) {
    case Scheme::proposed: return train_model_based(env, model_based_options(c, seed));
    case Scheme::model_free: return train_model_free(env, model_free_options(c, seed));
    default: return run_fixed_bitwidth(env, scheme_bitwidth(c), training_options(c), seed);
  }
}

// Count of executed rounds that break the RB budget or the delay budget.
inline std::size_t constraint_violations(const std::vector<RoundLog>& rounds, const NetworkConfig& net) {
  std::size_t bad = 0;
  for (const auto& r : rounds) {
    if (r.result.action.selected_count() > net.rb_count || r.result.delay > net.delay_budget_s ||
        r.result.action.alpha < 1 || r.result.action.alpha > net.full_precision_bits) {
      ++bad;
    }
  }
  return bad;
}

}  // namespace bwfl
