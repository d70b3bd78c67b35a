// Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
// Exit status is the number of failing criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "bwfl/bwfl.hpp"
#include "oracle_bound.hpp"
#include "oracle_mdp.hpp"
#include "planted_toy.hpp"
#include "reference.hpp"

using namespace bwfl;

namespace {

// Pinned tolerances and budgets.
constexpr double kQuantSlack = 1e-12;
constexpr double kBitplaneTol = 1e-9;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradAbsFloor = 1e-8;
constexpr double kBoundTol = 1e-12;
constexpr double kRecoveryTol = 0.05;
constexpr double kPgTol = 0.02;
constexpr double kPlannerHitRate = 0.95;
constexpr double kAccuracyGap = 0.03;
constexpr double kRoundsRatio = 0.9;
constexpr double kQuadTol = 1e-12;

constexpr std::size_t kDeskRounds = 200;        // equal-round accuracy comparison
constexpr std::size_t kEfficiencyRounds = 150;  // per run, model-based vs model-free
constexpr std::uint64_t kEfficiencySeeds = 5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Every executed action from every run below, checked against the RB and
// delay budgets independently of the library's own bookkeeping.
struct Compliance {
  std::size_t actions = 0;
  std::size_t violations = 0;
  std::string first;

  void add(const std::vector<RoundLog>& rounds, const NetworkConfig& net) {
    for (const auto& r : rounds) {
      ++actions;
      std::size_t sel = 0;
      for (auto b : r.result.action.u) sel += b ? 1 : 0;
      if (sel > net.rb_count || !(r.result.delay <= net.delay_budget_s)) {
        if (violations++ == 0) {
          first = "round " + std::to_string(r.result.round) + " selected " + std::to_string(sel) + " delay " +
                  std::to_string(r.result.delay);
        }
      }
    }
  }
};

Compliance compliance;

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

ExperimentConfig desk_config() {
  return load_config(std::filesystem::path(BWFL_SOURCE_DIR) / "configs" / "desk_mnist.ini");
}

std::shared_ptr<const Dataset> desk_data() {
  static const std::shared_ptr<const Dataset> data = load_dataset(desk_config());
  return data;
}

// ---------------------------------------------------------------------------

Outcome quantizer() {
  Rng rng = make_rng(101, Stream::synthetic);
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  double worst = 0.0;
  bool ok = true;
  for (int alpha = 2; alpha <= 8; ++alpha) {
    const double bound = 1.0 / (2.0 * (std::ldexp(1.0, alpha) - 1.0)) + kQuantSlack;
    for (int i = 0; i < 100000; ++i) {
      const double x = w(rng);
      const double e = std::abs(quantize(x, alpha, 32) - x);
      worst = std::max(worst, e / bound);
      ok = ok && e <= bound;
    }
  }
  std::size_t identity_misses = 0;
  for (int i = 0; i < 100000; ++i) {
    const double x = w(rng);
    if (quantize(x, 32, 32) != x) ++identity_misses;
  }
  return {ok && identity_misses == 0,
          "worst error/bound " + fmt("%.6f", worst) + ", alpha=V mismatches " + std::to_string(identity_misses)};
}

Outcome bitplane() {
  Rng rng = make_rng(102, Stream::synthetic);
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  double worst = 0.0;
  for (int alpha : {2, 4, 8}) {
    for (int i = 0; i < 10000; ++i) {
      std::vector<double> a(64), b(64);
      for (auto& x : a) x = quantize(w(rng), alpha, 32);
      for (auto& x : b) x = quantize(w(rng), alpha, 32);
      double arithmetic = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) arithmetic += a[k] * b[k];
      worst = std::max(worst, std::abs(bitplane_inner_product(a, b, alpha) - arithmetic));
    }
  }
  return {worst <= kBitplaneTol, "max abs difference " + fmt("%.3g", worst)};
}

Outcome full_precision_pipeline() {
  ExperimentConfig c = desk_config();
  FLEnvironment env(make_setup(c, 1, desk_data()));
  const FLSetup& s = env.setup();
  ref::Net net;
  net.dims = env.global_model().layer_dims;
  for (const auto& l : env.global_model().layers) net.w.push_back(l.values);
  Rng pick = make_rng(1, Stream::scheduler);
  const std::vector<int> ladder{c.V};
  std::vector<RoundLog> log;
  std::size_t mismatched_rounds = 0;
  double worst_loss = 0.0;
  const auto train = s.partition.all_indices();
  for (std::size_t t = 0; t < 10; ++t) {
    const Action a = fixed_bitwidth_action(env, c.V, pick, ladder);
    FLRoundResult r = env.step(a);
    net = ref::fedavg_round(net, *s.data, s.partition.devices, a.u, s.lambda);
    bool same = true;
    for (std::size_t k = 0; k < net.w.size(); ++k) same = same && r.global_model.layers[k].values == net.w[k];
    if (!same) ++mismatched_rounds;
    worst_loss = std::max(worst_loss, std::abs(r.loss - ref::mean_loss(net, *s.data, train)));
    log.push_back({std::move(r), "train", t + 1, 0, std::nullopt});
  }
  compliance.add(log, env.net());
  return {mismatched_rounds == 0, "rounds with differing weights " + std::to_string(mismatched_rounds) +
                                      " of 10, max loss difference " + fmt("%.3g", worst_loss)};
}

Outcome gradients() {
  Rng rng = make_rng(104, Stream::init);
  double worst = 0.0;
  bool ok = true;
  auto check = [&](double fd, double an) {
    const double err = std::abs(fd - an);
    worst = std::max(worst, err / (std::max(std::abs(fd), std::abs(an)) + kGradAbsFloor));
    ok = ok && err <= kGradRelTol * std::max(std::abs(fd), std::abs(an)) + kGradAbsFloor;
  };
  // Model: 8*12 + 12*4 = 144 parameters.
  for (int trial = 0; trial < 5; ++trial) {
    const ModelParams m = init_model({8, 12, 4}, 32, rng);
    const Dataset ds = synthetic(4, 8, 5, 200 + trial, 0.3);
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const auto lg = loss_and_gradient(m, ds, idx);
    for (std::size_t k = 0; k < m.layers.size(); ++k) {
      for (std::size_t i = 0; i < m.layers[k].values.size(); ++i) {
        ModelParams hi = m, lo = m;
        hi.layers[k].values[i] += 1e-6;
        lo.layers[k].values[i] -= 1e-6;
        check((loss_and_gradient(hi, ds, idx).loss - loss_and_gradient(lo, ds, idx).loss) / 2e-6,
              lg.gradient.layers[k].values[i]);
      }
    }
  }
  // Policy: the score function used by the gradient estimator.
  std::normal_distribution<double> n(0.0, 1.0);
  const StateSpace space{10, 1.0};
  for (int trial = 0; trial < 20; ++trial) {
    PolicyParams p = make_policy(std::vector<std::size_t>{100, 200, 200, 300, 400}, {1, 2, 4, 8, 16, 32});
    for (double& t : p.theta) t = n(rng);
    std::vector<std::uint8_t> u(5);
    for (auto& b : u) b = uniform01(rng) < 0.5;
    const std::size_t bin = static_cast<std::size_t>(trial) % 10, j = static_cast<std::size_t>(trial) % 6;
    const auto g = grad_log_prob(p, bin, space, u, j);
    for (std::size_t i = 0; i < p.theta.size(); ++i) {
      PolicyParams hi = p, lo = p;
      hi.theta[i] += 1e-6;
      lo.theta[i] -= 1e-6;
      check((log_prob(hi, bin, space, u, j) - log_prob(lo, bin, space, u, j)) / 2e-6, g[i]);
    }
  }
  return {ok, "worst relative error " + fmt("%.3g", worst)};
}

Outcome bound_oracle() {
  Rng rng = make_rng(105, Stream::synthetic);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> alpha(1, 32);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    for (bool nonconvex : {false, true}) {
      BoundParams p;
      p.mode = nonconvex ? BoundMode::nonconvex : BoundMode::convex;
      p.L = 0.1 + 10 * u(rng);
      p.Lgamma = 0.1 + 10 * u(rng);
      p.zeta1 = 5 * u(rng);
      p.zeta2 = 5 * u(rng);
      p.Beps2 = 5 * u(rng);
      p.Ups4M2 = nonconvex ? 3 * u(rng) : 0.0;
      const double N = 10 + std::floor(1000 * u(rng));
      const double A = 1 + std::floor((N - 1) * u(rng));
      const BoundFeatures f{5 * u(rng), A, N, alpha(rng), 1 + static_cast<std::size_t>(20 * u(rng)), 32};
      const double L = nonconvex ? p.Lgamma : p.L;
      const double want = oracle::oracle_bound(f.grad_norm_sq, f.A, f.N, f.alpha, static_cast<double>(f.M), f.V, L, p.zeta1, p.zeta2,
                                               p.Beps2, nonconvex, p.Ups4M2);
      worst = std::max(worst, std::abs(bound_step(f, p) - want) / std::max(1.0, std::abs(want)));
    }
  }
  std::size_t inexact = 0;
  for (int t = 0; t < 1000; ++t) {
    BoundParams p;
    p.L = 0.01 + 10 * u(rng);
    p.zeta1 = 10 * u(rng);
    p.zeta2 = 10 * u(rng);
    p.Beps2 = 10 * u(rng);
    const double N = 1 + std::floor(100 * u(rng)), g2 = 10 * u(rng);
    if (bound_step({g2, N, N, 32, 7, 32}, p) != -g2 / (2.0 * p.L)) ++inexact;
  }
  return {worst <= kBoundTol && inexact == 0,
          "max scaled difference " + fmt("%.3g", worst) + ", inexact descent cases " + std::to_string(inexact)};
}

Outcome regression_recovery() {
  const BoundParams truth = oracle::planted();
  const auto buf = oracle::planted_buffer(truth, 40, 8);
  EstimatorOptions opt;  // 0.02 learning rates, 8 restarts
  opt.seed = 8;
  const auto fit = estimate_params_restarts(buf, opt, BoundParams{});
  const double eL = rel_err(fit.params.L, truth.L), e1 = rel_err(fit.params.zeta1, truth.zeta1),
               e2 = rel_err(fit.params.zeta2, truth.zeta2), eB = rel_err(fit.params.Beps2, truth.Beps2),
               eSum = rel_err(fit.params.zeta1 + fit.params.Beps2, truth.zeta1 + truth.Beps2);
  const bool pass = eL <= kRecoveryTol && e1 <= kRecoveryTol && e2 <= kRecoveryTol && eB <= kRecoveryTol;
  return {pass, "relative errors L " + fmt("%.4f", eL) + ", zeta1 " + fmt("%.4f", e1) + ", zeta2 " +
                    fmt("%.4f", e2) + ", Beps2 " + fmt("%.4f", eB) + ", zeta1+Beps2 " + fmt("%.4f", eSum)};
}

Outcome policy_gradient_oracle() {
  const oracle::TwoStateMdp mdp;
  const PolicyParams p = oracle::policy({0.3, -0.2, -0.5, 0.4, 0.1, 0.0});
  Rng rng = make_rng(107, Stream::planning);
  const auto trajectories = oracle::sample(mdp, p, 100000, rng);
  const double err = oracle::relative_error(policy_gradient(p, oracle::space(), trajectories),
                                            oracle::exact_gradient(mdp, p));
  return {err <= kPgTol, "relative error " + fmt("%.4f", err)};
}

Outcome planner_optimality() {
  std::size_t hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    PlantedEnvironment env(toy::setup(seed));
    const auto run = train_model_based(env, toy::planner_options(seed));
    compliance.add(run.rounds, env.net());
    PlantedEnvironment replay(toy::setup(seed));
    for (std::size_t i = 0; i + 1 < run.rounds.size(); ++i) replay.step(run.rounds[i].result.action);
    if (run.rounds.back().result.action == toy::best_action(replay)) ++hits;
  }
  return {static_cast<double>(hits) >= kPlannerHitRate * 100.0, std::to_string(hits) + "/100 match"};
}

SchedulerRun desk_run(Scheme scheme, std::uint64_t seed, std::size_t rounds) {
  ExperimentConfig c = desk_config();
  c.scheme = scheme;
  c.rounds = rounds;
  c.stop_on_convergence = false;
  FLEnvironment env(make_setup(c, seed, desk_data()));
  SchedulerRun run = run_scheme(env, c, seed);
  compliance.add(run.rounds, env.net());
  return run;
}

Outcome desk_accuracy() {
  const SchedulerRun fixed8 = desk_run(Scheme::fixed, 1, kDeskRounds);  // fixed_alpha defaults to 8
  const SchedulerRun full = desk_run(Scheme::full_precision, 1, kDeskRounds);
  const double a8 = fixed8.rounds.back().result.test_accuracy, aV = full.rounds.back().result.test_accuracy;
  return {aV - a8 <= kAccuracyGap, "accuracy after " + std::to_string(kDeskRounds) + " rounds: alpha=8 " +
                                       fmt("%.4f", a8) + ", alpha=V " + fmt("%.4f", aV)};
}

MetricsFile as_metrics(const SchedulerRun& run, const char* scheme, std::uint64_t seed) {
  MetricsFile f;
  f.id = {"desk", scheme, seed};
  double cum = 0.0;
  for (const auto& r : run.rounds) {
    cum += r.result.delay;
    f.rows.push_back({r.env_interactions, cum, r.result.loss, r.result.test_accuracy});
  }
  return f;
}

Outcome sample_efficiency() {
  std::vector<MetricsFile> files;
  for (std::uint64_t seed = 1; seed <= kEfficiencySeeds; ++seed) {
    files.push_back(as_metrics(desk_run(Scheme::proposed, seed, kEfficiencyRounds), "proposed", seed));
    files.push_back(as_metrics(desk_run(Scheme::model_free, seed, kEfficiencyRounds), "model_free", seed));
  }
  const Comparison c = compare_runs(files);
  double mb = 0.0, mf = 0.0;
  for (const auto& s : c.schemes) (s.scheme == "proposed" ? mb : mf) = s.rounds_to_threshold.mean;
  return {mb <= kRoundsRatio * mf, "loss threshold " + fmt("%.4f", c.threshold) + ", mean real rounds: model-based " +
                                       fmt("%.1f", mb) + ", model-free " + fmt("%.1f", mf) + ", ratio " +
                                       fmt("%.3f", mb / mf)};
}

Outcome constraint_compliance() {
  return {compliance.actions > 0 && compliance.violations == 0,
          std::to_string(compliance.violations) + " violations in " + std::to_string(compliance.actions) +
              " executed actions" + (compliance.first.empty() ? "" : " (first: " + compliance.first + ")")};
}

Outcome delay_model() {
  const NetworkConfig net;  // reference constants
  const DeviceProfile p;
  bool ok = delay_quantize(1, 32, net.model_size, p) == 0.0 && delay_quantize(32, 32, net.model_size, p) == 0.0;
  const double base = delay_compute(1, p, net.mult_ops);
  double worst = 0.0;
  for (int a = 1; a <= 8; ++a) {
    worst = std::max(worst, rel_err(delay_compute(a, p, net.mult_ops), a * a * base));
  }
  for (int a = 1; a <= 6; ++a) {
    const double d2 = delay_compute(a + 2, p, net.mult_ops) - 2 * delay_compute(a + 1, p, net.mult_ops) +
                      delay_compute(a, p, net.mult_ops);
    worst = std::max(worst, rel_err(d2, 2 * base));
  }

  // Stopping rule on +-d alternating losses, whose population variance is d^2.
  auto fires_at = [](double d, double threshold) {
    ConvergenceMonitor m(20, threshold);
    for (std::size_t t = 1; t <= 60; ++t)
      if (m.push(1.0 + (t % 2 ? d : -d))) return t;
    return std::size_t{0};
  };
  const bool below = fires_at(0.0316, 1e-3) == 20;  // variance 0.00099856
  const bool above = fires_at(0.0317, 1e-3) == 0;   // variance 0.00100489
  ConvergenceMonitor probe(20, 1.0);
  for (int t = 0; t < 20; ++t) probe.push(1.0 + (t % 2 ? 0.0316 : -0.0316));
  const bool strict = fires_at(0.0316, probe.variance()) == 0;
  ok = ok && below && above && strict && worst <= kQuadTol;
  return {ok, "quadratic worst relative error " + fmt("%.3g", worst) + ", stop rule below/above/equal " +
                  (below ? "ok" : "wrong") + "/" + (above ? "ok" : "wrong") + "/" + (strict ? "ok" : "wrong")};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0 = no runtime limit
    std::function<Outcome()> run;
  };
  // Compliance runs last so it sees every executed action.
  const std::vector<Criterion> criteria{
      {1, "quantizer error bound", 5, quantizer},
      {2, "bit-plane inner product", 10, bitplane},
      {3, "full-precision pipeline vs reference federated averaging", 0, full_precision_pipeline},
      {4, "gradients vs finite differences", 30, gradients},
      {5, "bound vs independent transcription", 0, bound_oracle},
      {6, "constant recovery from planted transitions", 60, regression_recovery},
      {7, "policy-gradient estimator vs closed form", 60, policy_gradient_oracle},
      {8, "planner optimality on the planted toy", 120, planner_optimality},
      {9, "desk MNIST 8-bit vs full-precision accuracy", 1800, desk_accuracy},
      {10, "model-based vs model-free real rounds", 0, sample_efficiency},
      {12, "delay model and stopping rule", 0, delay_model},
      {11, "constraint compliance across all runs", 0, constraint_compliance},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool pass = o.pass;
    std::string detail = o.detail + "; " + fmt("%.1f", secs) + " s";
    if (c.budget_s > 0 && secs > c.budget_s) {
      pass = false;
      detail += " exceeds " + fmt("%.0f", c.budget_s) + " s";
    }
    failures += pass ? 0 : 1;
    std::printf("%s criterion %d: %s: %s\n", pass ? "PASS" : "FAIL", c.id, c.name, detail.c_str());
    std::fflush(stdout);
  }
  return failures;
}
