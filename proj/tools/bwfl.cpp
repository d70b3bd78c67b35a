// Command-line front end: run, compare, estimate, selftest.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bwfl/bwfl.hpp"
#include "bwfl/config.hpp"
#include "bwfl/experiment.hpp"
#include "bwfl/metrics.hpp"
#include "bwfl/selftest.hpp"

namespace fs = std::filesystem;

namespace {

struct ConfigFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::string> scheme;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> seeds;
  std::optional<std::size_t> devices;
  std::optional<std::size_t> rounds;
  std::optional<std::string> output;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config, "INI configuration file")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "override any key: section.key=value (repeatable)");
    app->add_option("--scheme", scheme, "proposed | model_free | binary | full_precision | fixed");
    app->add_option("--seed", seed, "experiment seed");
    app->add_option("--seeds", seeds, "comma-separated seed sweep");
    app->add_option("--devices", devices, "number of devices M");
    app->add_option("--rounds", rounds, "maximum real rounds T");
    app->add_option("-o,--output", output, "output directory");
  }

  bwfl::ExperimentConfig resolve() const {
    bwfl::ExperimentConfig c;
    if (!config.empty()) c = bwfl::load_config(config);
    if (scheme) bwfl::set_field(c, "experiment.scheme", *scheme);
    if (seed) c.seed = *seed;
    if (seeds) bwfl::set_field(c, "experiment.seeds", *seeds);
    if (devices) c.devices = *devices;
    if (rounds) c.rounds = *rounds;
    if (output) c.output = *output;
    for (const auto& s : sets) bwfl::apply_override(c, s);
    bwfl::validate(c);
    return c;
  }
};

std::vector<std::uint64_t> seed_list(const bwfl::ExperimentConfig& c) {
  if (c.seeds.empty()) return {c.seed};
  std::vector<std::uint64_t> out;
  for (int s : c.seeds) out.push_back(static_cast<std::uint64_t>(s));
  return out;
}

int cmd_run(const ConfigFlags& flags, bool dump) {
  const bwfl::ExperimentConfig cfg = flags.resolve();
  if (dump) {
    std::cout << bwfl::dump_config(cfg);
    return 0;
  }
  const auto data = bwfl::load_dataset(cfg);
  const std::string hash = bwfl::config_hash(cfg);
  fs::create_directories(cfg.output);
  for (std::uint64_t seed : seed_list(cfg)) {
    bwfl::FLEnvironment env(bwfl::make_setup(cfg, seed, data));
    const bwfl::SchedulerRun run = bwfl::run_scheme(env, cfg, seed);
    const bwfl::RunIdentity id{hash, bwfl::to_string(cfg.scheme), seed};
    const std::string stem = std::string(bwfl::to_string(cfg.scheme)) + "_seed" + std::to_string(seed);
    {
      std::ofstream csv(fs::path(cfg.output) / (stem + ".csv"));
      bwfl::write_metrics_csv(csv, id, run.rounds);
    }
    const auto summary = bwfl::run_summary(id, run, env.net());
    {
      std::ofstream js(fs::path(cfg.output) / (stem + ".json"));
      js << summary.dump(2) << "\n";
    }
    if (summary["constraint_violations"].get<std::size_t>() != 0) {
      std::cerr << "error: " << stem << " executed actions outside the constraints\n";
      return 3;
    }
    std::printf("%s: rounds=%zu final_loss=%.6g final_accuracy=%.4f delay=%.3fs\n", stem.c_str(),
                run.rounds.size(), summary.value("final_loss", 0.0), summary.value("final_accuracy", 0.0),
                summary.value("cumulative_delay_s", 0.0));
  }
  return 0;
}

int cmd_compare(const std::vector<std::string>& files, std::optional<double> threshold) {
  std::vector<bwfl::MetricsFile> runs;
  for (const auto& f : files) runs.push_back(bwfl::read_metrics_csv(f));
  bwfl::print_comparison(std::cout, bwfl::compare_runs(runs, threshold));
  return 0;
}

int cmd_estimate(const ConfigFlags& flags) {
  const bwfl::ExperimentConfig cfg = flags.resolve();
  bwfl::FLEnvironment env(bwfl::make_setup(cfg, cfg.seed));
  bwfl::Rng rng = bwfl::make_rng(cfg.seed, bwfl::Stream::scheduler);
  std::vector<bwfl::TransitionRecord> buffer;
  for (std::size_t i = 0; i < cfg.explore_rounds; ++i) {
    const auto r = env.step(bwfl::random_action(env, cfg.bitwidths, rng));
    buffer.push_back(bwfl::transition_of(env, r));
  }
  bwfl::BoundParams init;
  init.mode = bwfl::bound_mode(cfg);
  const auto fit = bwfl::estimate_params_restarts(buffer, bwfl::estimator_options(cfg, cfg.seed), init);
  nlohmann::json j = bwfl::params_json(fit.params);
  j["regression_loss"] = fit.loss;
  j["records"] = buffer.size();
  j["config_hash"] = bwfl::config_hash(cfg);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_selftest() {
  int failed = 0;
  for (const auto& r : bwfl::run_selftest()) {
    std::printf("%s  %s%s%s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.empty() ? "" : "  ",
                r.detail.c_str());
    failed += r.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variable-bitwidth federated learning simulator"};
  app.require_subcommand(1);

  ConfigFlags run_flags, est_flags;
  bool dump = false;
  auto* run = app.add_subcommand("run", "run one scheme (optionally over a seed sweep) and write metrics");
  run_flags.attach(run);
  run->add_flag("--dump-config", dump, "print the effective configuration and exit");

  std::vector<std::string> files;
  std::optional<double> threshold;
  auto* compare = app.add_subcommand("compare", "compare metrics files from runs with the same configuration");
  compare->add_option("files", files, "metrics CSV files")->required()->check(CLI::ExistingFile);
  compare->add_option("--threshold", threshold, "loss threshold (default: largest per-run minimum loss)");

  auto* estimate = app.add_subcommand("estimate", "run the exploration rounds and fit the bound constants");
  est_flags.attach(estimate);

  auto* selftest = app.add_subcommand("selftest", "quick numeric property checks");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_flags, dump);
    if (*compare) return cmd_compare(files, threshold);
    if (*estimate) return cmd_estimate(est_flags);
    if (*selftest) return cmd_selftest();
  } catch (const bwfl::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
