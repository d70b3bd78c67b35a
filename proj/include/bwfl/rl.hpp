#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "bwfl/action.hpp"
#include "bwfl/bound.hpp"
#include "bwfl/error.hpp"
#include "bwfl/federation.hpp"
#include "bwfl/random.hpp"
#include "bwfl/wireless.hpp"

namespace bwfl {

// ---------------------------------------------------------------------------
// MDP pieces

struct StateSpace {
  std::size_t levels = 20;
  double f_max = 1.0;

  void validate() const {
    if (levels < 2) throw ArgumentError("state space needs at least 2 levels");
    if (!(f_max > 0.0) || !std::isfinite(f_max)) throw ArgumentError("state space f_max must be > 0");
  }
  double bin_centre(std::size_t bin) const {
    return (static_cast<double>(bin) + 0.5) / static_cast<double>(levels) * f_max;
  }
};

inline std::size_t discretize_state(double F, const StateSpace& space) {
  if (F < 0.0) throw ArgumentError("discretize_state: loss must be >= 0");
  return loss_bin(F, space.levels, space.f_max);
}

inline double reward(double F) { return -F; }

// ---------------------------------------------------------------------------
// Policy

// Linear logits on the state encoding [bin / (levels - 1), 1]. Each device
// has a logistic selection head (devices with equal sample counts share one
// head, since nothing the scheduler observes tells them apart) and one
// softmax head picks the bitwidth. theta holds two weights per head:
// selection heads first, then one pair per candidate bitwidth.
struct PolicyParams {
  std::vector<double> theta;
  std::vector<std::size_t> head_of_device;
  std::size_t num_heads = 0;
  std::vector<int> bitwidths;

  std::size_t num_devices() const { return head_of_device.size(); }
  std::size_t num_params() const { return 2 * (num_heads + bitwidths.size()); }
  bool operator==(const PolicyParams&) const = default;
};

inline PolicyParams make_policy(std::span<const std::size_t> sample_counts, std::vector<int> bitwidths,
                                bool tie_equal_devices = true) {
  if (bitwidths.empty()) throw ArgumentError("policy: empty bitwidth set");
  for (std::size_t j = 0; j < bitwidths.size(); ++j) {
    if (bitwidths[j] < 1) throw InvalidBitwidth("policy: bitwidths must be >= 1");
    if (j > 0 && bitwidths[j] <= bitwidths[j - 1]) {
      throw ArgumentError("policy: bitwidths must be strictly increasing");
    }
  }
  PolicyParams p;
  p.bitwidths = std::move(bitwidths);
  std::vector<std::size_t> seen;
  for (std::size_t m = 0; m < sample_counts.size(); ++m) {
    std::size_t head = p.num_heads;
    if (tie_equal_devices) {
      for (std::size_t k = 0; k < seen.size(); ++k) {
        if (seen[k] == sample_counts[m]) head = k;
      }
    }
    if (head == p.num_heads) {
      seen.push_back(sample_counts[m]);
      ++p.num_heads;
    }
    p.head_of_device.push_back(head);
  }
  p.theta.assign(p.num_params(), 0.0);
  return p;
}

inline std::size_t bitwidth_index(const PolicyParams& p, int alpha) {
  const auto it = std::find(p.bitwidths.begin(), p.bitwidths.end(), alpha);
  if (it == p.bitwidths.end()) throw InvalidBitwidth("bitwidth " + std::to_string(alpha) + " is not a policy action");
  return static_cast<std::size_t>(it - p.bitwidths.begin());
}

inline double state_encoding(std::size_t bin, const StateSpace& space) {
  return static_cast<double>(bin) / static_cast<double>(space.levels - 1);
}

struct PolicyOutput {
  std::vector<double> select;    // per-device inclusion probability
  std::vector<double> bitwidth;  // distribution over policy bitwidths
};

inline PolicyOutput policy_forward(const PolicyParams& p, std::size_t bin, const StateSpace& space) {
  if (bin >= space.levels) throw ArgumentError("policy_forward: state out of range");
  if (p.theta.size() != p.num_params()) throw ShapeError("policy_forward: theta has the wrong length");
  const double s = state_encoding(bin, space);
  auto logit = [&](std::size_t head) { return p.theta[2 * head] * s + p.theta[2 * head + 1]; };
  PolicyOutput out;
  out.select.resize(p.num_devices());
  for (std::size_t m = 0; m < p.num_devices(); ++m) out.select[m] = sigmoid(logit(p.head_of_device[m]));
  const std::size_t Y = p.bitwidths.size();
  std::vector<double> z(Y);
  for (std::size_t j = 0; j < Y; ++j) z[j] = logit(p.num_heads + j);
  const double zmax = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  out.bitwidth.resize(Y);
  for (std::size_t j = 0; j < Y; ++j) total += out.bitwidth[j] = std::exp(z[j] - zmax);
  for (double& q : out.bitwidth) q /= total;
  return out;
}

// log pi(a | s) of a raw sample: every device's Bernoulli term plus the
// bitwidth term.
inline double log_prob(const PolicyParams& p, std::size_t bin, const StateSpace& space,
                       std::span<const std::uint8_t> u, std::size_t alpha_index) {
  if (u.size() != p.num_devices()) throw ShapeError("log_prob: selection length must equal M");
  const PolicyOutput out = policy_forward(p, bin, space);
  double lp = std::log(out.bitwidth.at(alpha_index));
  for (std::size_t m = 0; m < u.size(); ++m) lp += std::log(u[m] ? out.select[m] : 1.0 - out.select[m]);
  return lp;
}

inline std::vector<double> grad_log_prob(const PolicyParams& p, std::size_t bin, const StateSpace& space,
                                         std::span<const std::uint8_t> u, std::size_t alpha_index) {
  if (u.size() != p.num_devices()) throw ShapeError("grad_log_prob: selection length must equal M");
  const PolicyOutput out = policy_forward(p, bin, space);
  const double s = state_encoding(bin, space);
  std::vector<double> g(p.num_params(), 0.0);
  for (std::size_t m = 0; m < u.size(); ++m) {
    const double d = (u[m] ? 1.0 : 0.0) - out.select[m];
    g[2 * p.head_of_device[m]] += d * s;
    g[2 * p.head_of_device[m] + 1] += d;
  }
  for (std::size_t j = 0; j < p.bitwidths.size(); ++j) {
    const double d = (j == alpha_index ? 1.0 : 0.0) - out.bitwidth[j];
    g[2 * (p.num_heads + j)] += d * s;
    g[2 * (p.num_heads + j) + 1] += d;
  }
  return g;
}

// Channel snapshot an action is sampled against.
struct WirelessContext {
  std::span<const DeviceProfile> profiles;
  std::span<const double> gains;
  const NetworkConfig* net = nullptr;
};

template <typename Env>
WirelessContext context_of(const Env& env) {
  return {env.profiles(), env.gains(), &env.net()};
}

struct SampledAction {
  std::vector<std::uint8_t> u_raw;  // what the policy drew; log-probs use this
  std::size_t alpha_index = 0;
  Action executed;                  // after projection and repair
};

namespace detail {

// Indices ordered by descending probability, ties broken uniformly at random.
inline std::vector<std::size_t> rank_by_probability(std::span<const double> prob,
                                                    std::span<const std::size_t> candidates, Rng& rng) {
  std::vector<std::size_t> order(candidates.begin(), candidates.end());
  std::shuffle(order.begin(), order.end(), rng);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return prob[a] > prob[b]; });
  return order;
}

inline std::vector<std::uint8_t> project_selection(std::span<const std::uint8_t> u,
                                                   std::span<const double> prob, std::size_t U, Rng& rng) {
  std::vector<std::size_t> chosen;
  for (std::size_t m = 0; m < u.size(); ++m)
    if (u[m]) chosen.push_back(m);
  std::size_t keep = std::min(chosen.size(), U);
  if (chosen.empty()) {
    chosen.resize(u.size());
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    keep = 1;
  }
  const auto order = rank_by_probability(prob, chosen, rng);
  std::vector<std::uint8_t> out(u.size(), 0);
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = 1;
  return out;
}

inline Action make_feasible(std::vector<std::uint8_t> u, int alpha, const PolicyParams& p,
                            const WirelessContext& ctx) {
  return repair(Action{std::move(u), alpha}, ctx.profiles, ctx.gains, *ctx.net, p.bitwidths);
}

}  // namespace detail

// Draws each device independently and a bitwidth from its head, then projects:
// an empty draw keeps the most likely device, more than U draws keep the U most
// likely, and the wireless repair fixes any delay violation.
inline SampledAction sample_action(const PolicyParams& p, std::size_t bin, const StateSpace& space,
                                   const WirelessContext& ctx, Rng& rng) {
  const PolicyOutput out = policy_forward(p, bin, space);
  SampledAction s;
  s.u_raw.resize(p.num_devices());
  for (std::size_t m = 0; m < p.num_devices(); ++m) s.u_raw[m] = uniform01(rng) < out.select[m] ? 1 : 0;
  const double r = uniform01(rng);
  double cdf = 0.0;
  s.alpha_index = out.bitwidth.size() - 1;
  for (std::size_t j = 0; j < out.bitwidth.size(); ++j) {
    cdf += out.bitwidth[j];
    if (r < cdf) {
      s.alpha_index = j;
      break;
    }
  }
  if (p.num_devices() > 0) {
    s.executed = detail::make_feasible(detail::project_selection(s.u_raw, out.select, ctx.net->rb_count, rng),
                                       p.bitwidths[s.alpha_index], p, ctx);
  } else {
    s.executed = Action{{}, p.bitwidths[s.alpha_index]};
  }
  return s;
}

// Deployment rule: devices with probability above 1/2, the most likely
// bitwidth, then the same projection and repair as sample_action.
inline Action greedy_action(const PolicyParams& p, std::size_t bin, const StateSpace& space,
                            const WirelessContext& ctx, Rng& rng) {
  const PolicyOutput out = policy_forward(p, bin, space);
  std::vector<std::uint8_t> u(p.num_devices());
  for (std::size_t m = 0; m < u.size(); ++m) u[m] = out.select[m] > 0.5 ? 1 : 0;
  const std::size_t j = argmax(out.bitwidth);
  return detail::make_feasible(detail::project_selection(u, out.select, ctx.net->rb_count, rng),
                               p.bitwidths[j], p, ctx);
}

struct TrajectoryStep {
  std::size_t bin = 0;
  std::vector<std::uint8_t> u;
  std::size_t alpha_index = 0;
  double reward = 0.0;
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
};

// REINFORCE: mean over trajectories of (1/T) sum_t r_t grad log pi(a_t | s_t).
// With `baseline`, the mean reward over all steps is subtracted first.
inline std::vector<double> policy_gradient(const PolicyParams& p, const StateSpace& space,
                                           std::span<const Trajectory> trajectories, bool baseline = false) {
  if (trajectories.empty()) throw ArgumentError("policy_gradient: no trajectories");
  double b = 0.0;
  if (baseline) {
    std::size_t n = 0;
    for (const auto& tr : trajectories)
      for (const auto& st : tr.steps) {
        b += st.reward;
        ++n;
      }
    if (n > 0) b /= static_cast<double>(n);
  }
  std::vector<double> g(p.num_params(), 0.0);
  for (const auto& tr : trajectories) {
    if (tr.steps.empty()) continue;
    const double scale = 1.0 / static_cast<double>(tr.steps.size() * trajectories.size());
    for (const auto& st : tr.steps) {
      const double r = st.reward - b;
      if (r == 0.0) continue;
      const auto gl = grad_log_prob(p, st.bin, space, st.u, st.alpha_index);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * r * gl[i];
    }
  }
  return g;
}

inline PolicyParams update_policy(PolicyParams p, std::span<const double> grad, double iota) {
  if (!(iota > 0.0)) throw ArgumentError("update_policy: learning rate must be > 0");
  if (grad.size() != p.theta.size()) throw ShapeError("update_policy: gradient has the wrong length");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) throw NumericError("update_policy: non-finite gradient entry " + std::to_string(i));
    p.theta[i] += iota * grad[i];
  }
  return p;
}

// ---------------------------------------------------------------------------
// Scheduler runs

struct RoundLog {
  FLRoundResult result;
  std::string phase;                  // explore | deploy | train
  std::size_t env_interactions = 0;   // real rounds so far, this one included
  std::size_t planning_iterations = 0;
  std::optional<BoundParams> params;  // estimate in force for this round
};

// Keeps only the newest round's model tensors so long runs stay small.
inline void append_round(std::vector<RoundLog>& log, RoundLog entry) {
  if (!log.empty()) {
    log.back().result.global_model = {};
    log.back().result.quantized_global = {};
  }
  log.push_back(std::move(entry));
}

struct SchedulerRun {
  PolicyParams policy;
  StateSpace space;
  std::vector<RoundLog> rounds;
  std::vector<TransitionRecord> buffer;
  std::optional<EstimateResult> estimate;
  std::size_t planning_iterations = 0;
  std::size_t planning_env_interactions = 0;  // real rounds during planning; must stay 0
  std::size_t converged_at = 0;
};

struct PolicyTrainingOptions {
  std::vector<int> bitwidths{1, 2, 4, 8, 16, 32};
  std::size_t levels = 20;
  double f_max = 0.0;          // 0 = the environment's initial loss
  double iota = 0.02;
  bool baseline = false;
  bool tie_equal_devices = true;
  std::size_t max_rounds = 100;  // T, real rounds in total
  std::size_t window = 20;
  double variance_threshold = 1e-3;
  bool stop_on_convergence = true;
  std::uint64_t seed = 0;
};

struct ModelBasedOptions : PolicyTrainingOptions {
  std::size_t explore_rounds = 20;          // I
  std::size_t planning_iterations = 500;    // H
  std::size_t trajectories_per_iteration = 8;
  std::size_t horizon = 10;
  std::size_t reestimate_every = 0;         // 0 = estimate once
  EstimatorOptions estimator;
  BoundParams init;
};

struct ModelFreeOptions : PolicyTrainingOptions {
  std::size_t episode_length = 10;
};

template <typename Env>
TransitionRecord transition_of(const Env& env, const FLRoundResult& r) {
  TransitionRecord t;
  t.F_t = r.loss_before;
  t.action = r.action;
  t.F_next = r.loss;
  t.grad_norm_sq = r.grad_norm_sq_before;
  const auto& n = env.sample_counts();
  for (std::size_t m = 0; m < n.size(); ++m)
    if (r.action.u[m]) t.A += static_cast<double>(n[m]);
  t.N = env.total_samples();
  t.V = env.V();
  return t;
}

// Learned dynamics: the bound with regressed constants, with the gradient
// norm of an unseen loss level interpolated from the recorded transitions.
class LearnedModel {
 public:
  LearnedModel(BoundParams params, std::span<const TransitionRecord> buffer) : params_(params) {
    if (buffer.empty()) throw ArgumentError("LearnedModel: empty buffer");
    for (const auto& r : buffer) points_.emplace_back(r.F_t, r.grad_norm_sq);
    std::sort(points_.begin(), points_.end());
  }

  double grad_norm_sq_at(double F) const {
    if (F <= points_.front().first) return points_.front().second;
    if (F >= points_.back().first) return points_.back().second;
    const auto hi = std::lower_bound(points_.begin(), points_.end(), std::make_pair(F, -1.0));
    const auto lo = hi - 1;
    const double span = hi->first - lo->first;
    if (span <= 0.0) return hi->second;
    const double w = (F - lo->first) / span;
    return lo->second + w * (hi->second - lo->second);
  }

  const BoundParams& params() const { return params_; }

 private:
  BoundParams params_;
  std::vector<std::pair<double, double>> points_;
};

template <typename Env>
std::vector<double> draw_planning_gains(const Env& env, Rng& rng) {
  std::vector<double> g(env.num_devices());
  for (std::size_t m = 0; m < g.size(); ++m) g[m] = channel_gain(env.profiles()[m], env.channel(), rng);
  return g;
}

// Policy optimisation against the learned model only. `env` is read for
// static descriptors (profiles, sample counts, channel statistics).
template <typename Env>
PolicyParams plan(PolicyParams policy, const Env& env, const LearnedModel& model, const StateSpace& space,
                  const ModelBasedOptions& opt, Rng& rng, std::size_t& iterations_done) {
  std::uniform_int_distribution<std::size_t> start(0, space.levels - 1);
  const auto& n = env.sample_counts();
  const double N = env.total_samples();
  for (std::size_t h = 0; h < opt.planning_iterations; ++h) {
    std::vector<Trajectory> batch(opt.trajectories_per_iteration);
    for (auto& tr : batch) {
      double F = space.bin_centre(start(rng));
      for (std::size_t t = 0; t < opt.horizon; ++t) {
        const std::size_t bin = discretize_state(F, space);
        const std::vector<double> gains = draw_planning_gains(env, rng);
        const WirelessContext ctx{env.profiles(), gains, &env.net()};
        SampledAction a = sample_action(policy, bin, space, ctx, rng);
        BoundFeatures f;
        f.grad_norm_sq = model.grad_norm_sq_at(F);
        for (std::size_t m = 0; m < n.size(); ++m)
          if (a.executed.u[m]) f.A += static_cast<double>(n[m]);
        f.N = N;
        f.alpha = a.executed.alpha;
        f.M = n.size();
        f.V = env.V();
        F = predict_next_state(F, f, model.params(), space.levels, space.f_max).F_next;
        tr.steps.push_back({bin, std::move(a.u_raw), a.alpha_index, reward(F)});
      }
    }
    const auto grad = policy_gradient(policy, space, batch, opt.baseline);
    policy = update_policy(std::move(policy), grad, opt.iota);
    ++iterations_done;
  }
  return policy;
}

// Explore with I random feasible rounds, fit the bound constants, improve the
// policy on simulated rollouts, then run the greedy policy on the real system.
template <typename Env>
SchedulerRun train_model_based(Env& env, const ModelBasedOptions& opt) {
  SchedulerRun run;
  run.space = {opt.levels, opt.f_max > 0.0 ? opt.f_max : env.initial_loss()};
  run.space.validate();
  run.policy = make_policy(env.sample_counts(), opt.bitwidths, opt.tie_equal_devices);
  Rng sched = make_rng(opt.seed, Stream::scheduler);
  Rng planning = make_rng(opt.seed, Stream::planning);
  ConvergenceMonitor monitor(opt.window, opt.variance_threshold);
  std::size_t real = 0;

  auto execute = [&](const Action& a, const char* phase) {
    FLRoundResult r = env.step(a);
    ++real;
    run.buffer.push_back(transition_of(env, r));
    const bool done = monitor.push(r.loss);
    std::optional<BoundParams> params;
    if (run.estimate) params = run.estimate->params;
    append_round(run.rounds, {std::move(r), phase, real, run.planning_iterations, params});
    if (done && run.converged_at == 0) run.converged_at = real;
    return done;
  };

  const std::size_t explore = std::min(opt.explore_rounds, opt.max_rounds);
  for (std::size_t i = 0; i < explore; ++i) execute(random_action(env, opt.bitwidths, sched), "explore");
  if (explore == 0) throw ArgumentError("model-based training needs at least one exploration round");

  auto fit_and_plan = [&] {
    EstimatorOptions est = opt.estimator;
    est.seed = opt.seed;
    run.estimate = estimate_params_restarts(run.buffer, est, opt.init);
    const LearnedModel model(run.estimate->params, run.buffer);
    const std::size_t before = env.rounds();
    run.policy = plan(std::move(run.policy), std::as_const(env), model, run.space, opt, planning,
                      run.planning_iterations);
    run.planning_env_interactions += env.rounds() - before;
    if (run.planning_env_interactions != 0) {
      throw std::logic_error("planning touched the real environment");
    }
  };
  fit_and_plan();

  std::size_t since_fit = 0;
  while (real < opt.max_rounds) {
    if (opt.stop_on_convergence && run.converged_at != 0) break;
    if (opt.reestimate_every > 0 && since_fit == opt.reestimate_every) {
      fit_and_plan();
      since_fit = 0;
    }
    const std::size_t bin = discretize_state(env.loss(), run.space);
    execute(greedy_action(run.policy, bin, run.space, context_of(env), sched), "deploy");
    ++since_fit;
  }
  return run;
}

// Same policy class and estimator, trained on real rounds only: one gradient
// step after every episode of `episode_length` rounds.
template <typename Env>
SchedulerRun train_model_free(Env& env, const ModelFreeOptions& opt) {
  if (opt.episode_length == 0) throw ArgumentError("episode length must be >= 1");
  SchedulerRun run;
  run.space = {opt.levels, opt.f_max > 0.0 ? opt.f_max : env.initial_loss()};
  run.space.validate();
  run.policy = make_policy(env.sample_counts(), opt.bitwidths, opt.tie_equal_devices);
  Rng sched = make_rng(opt.seed, Stream::scheduler);
  ConvergenceMonitor monitor(opt.window, opt.variance_threshold);
  std::size_t real = 0;

  while (real < opt.max_rounds && !(opt.stop_on_convergence && run.converged_at != 0)) {
    Trajectory tr;
    for (std::size_t t = 0; t < opt.episode_length && real < opt.max_rounds; ++t) {
      const std::size_t bin = discretize_state(env.loss(), run.space);
      SampledAction a = sample_action(run.policy, bin, run.space, context_of(env), sched);
      FLRoundResult r = env.step(a.executed);
      ++real;
      run.buffer.push_back(transition_of(env, r));
      tr.steps.push_back({bin, std::move(a.u_raw), a.alpha_index, reward(r.loss)});
      const bool done = monitor.push(r.loss);
      append_round(run.rounds, {std::move(r), "train", real, 0, std::nullopt});
      if (done && run.converged_at == 0) {
        run.converged_at = real;
        if (opt.stop_on_convergence) break;
      }
    }
    const std::vector<Trajectory> one{std::move(tr)};
    const auto grad = policy_gradient(run.policy, run.space, one, opt.baseline);
    run.policy = update_policy(std::move(run.policy), grad, opt.iota);
  }
  return run;
}

}  // namespace bwfl
