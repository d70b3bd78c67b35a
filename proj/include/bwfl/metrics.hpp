#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bwfl/config.hpp"
#include "bwfl/error.hpp"
#include "bwfl/rl.hpp"

namespace bwfl {

inline constexpr const char* kMetricsColumns =
    "round,phase,cum_delay_s,delay_s,loss,loss_selected,test_accuracy,alpha,selected,num_selected,"
    "env_interactions,planning_iterations,L,zeta1,zeta2,Beps2,Ups4M2";

struct RunIdentity {
  std::string config_hash;
  std::string scheme;
  std::uint64_t seed = 0;
};

// First line "# bwfl metrics v1 config_hash=<hex> scheme=<name> seed=<n>",
// then the column header, then one row per round.
inline void write_metrics_csv(std::ostream& out, const RunIdentity& id, const std::vector<RoundLog>& rounds) {
  using detail::format_double;
  out << "# bwfl metrics v1 config_hash=" << id.config_hash << " scheme=" << id.scheme << " seed=" << id.seed
      << "\n";
  out << kMetricsColumns << "\n";
  double cum = 0.0;
  for (const auto& log : rounds) {
    const auto& r = log.result;
    cum += r.delay;
    out << r.round << ',' << log.phase << ',' << format_double(cum) << ',' << format_double(r.delay) << ','
        << format_double(r.loss) << ',' << format_double(r.loss_selected) << ','
        << format_double(r.test_accuracy) << ',' << r.action.alpha << ',' << selection_string(r.action) << ','
        << r.action.selected_count() << ',' << log.env_interactions << ',' << log.planning_iterations;
    if (log.params) {
      const auto& p = *log.params;
      out << ',' << format_double(p.smoothness()) << ',' << format_double(p.zeta1) << ','
          << format_double(p.zeta2) << ',' << format_double(p.Beps2) << ',' << format_double(p.Ups4M2);
    } else {
      out << ",,,,,";
    }
    out << "\n";
  }
}

inline nlohmann::json params_json(const BoundParams& p) {
  return {{"mode", p.mode == BoundMode::convex ? "convex" : "nonconvex"},
          {"L", p.L},
          {"zeta1", p.zeta1},
          {"zeta2", p.zeta2},
          {"Beps2", p.Beps2},
          {"Lgamma", p.Lgamma},
          {"Ups4M2", p.Ups4M2}};
}

inline nlohmann::json run_summary(const RunIdentity& id, const SchedulerRun& run, const NetworkConfig& net) {
  nlohmann::json j;
  j["config_hash"] = id.config_hash;
  j["scheme"] = id.scheme;
  j["seed"] = id.seed;
  j["rounds"] = run.rounds.size();
  j["converged_at"] = run.converged_at;
  double cum = 0.0;
  for (const auto& r : run.rounds) cum += r.result.delay;
  j["cumulative_delay_s"] = cum;
  if (!run.rounds.empty()) {
    j["final_loss"] = run.rounds.back().result.loss;
    j["final_accuracy"] = run.rounds.back().result.test_accuracy;
    j["env_interactions"] = run.rounds.back().env_interactions;
  }
  j["planning_iterations"] = run.planning_iterations;
  j["planning_env_interactions"] = run.planning_env_interactions;
  std::size_t bad = 0;
  for (const auto& r : run.rounds) {
    if (r.result.action.selected_count() > net.rb_count || r.result.delay > net.delay_budget_s) ++bad;
  }
  j["constraint_violations"] = bad;
  if (run.estimate) {
    j["estimate"] = params_json(run.estimate->params);
    j["estimate"]["regression_loss"] = run.estimate->loss;
  }
  if (!run.policy.theta.empty()) {
    j["policy"] = {{"theta", run.policy.theta}, {"bitwidths", run.policy.bitwidths},
                   {"head_of_device", run.policy.head_of_device}};
  }
  return j;
}

// ---------------------------------------------------------------------------
// Reading back and comparing runs

struct MetricsRow {
  std::size_t round = 0;
  double cum_delay = 0.0;
  double loss = 0.0;
  double test_accuracy = 0.0;
};

struct MetricsFile {
  RunIdentity id;
  std::vector<MetricsRow> rows;
};

inline MetricsFile read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open");
  MetricsFile f;
  std::string line;
  if (!std::getline(in, line) || line.rfind("# bwfl metrics v1", 0) != 0) {
    throw FormatError(path.string() + ": missing '# bwfl metrics v1' identity line");
  }
  std::istringstream head(line.substr(17));
  std::string kv;
  while (head >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) continue;
    const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
    if (k == "config_hash") f.id.config_hash = v;
    if (k == "scheme") f.id.scheme = v;
    if (k == "seed") f.id.seed = std::stoull(v);
  }
  if (!std::getline(in, line) || line != kMetricsColumns) {
    throw FormatError(path.string() + ": unexpected column header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 7) throw FormatError(path.string() + ": short row '" + line + "'");
    try {
      f.rows.push_back({std::stoul(cells[0]), std::stod(cells[2]), std::stod(cells[4]), std::stod(cells[6])});
    } catch (const std::exception&) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
  }
  return f;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single run
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd m;
  m.n = v.size();
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double s = 0.0;
    for (double x : v) s += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(s / static_cast<double>(v.size() - 1));
  }
  return m;
}

struct SchemeComparison {
  std::string scheme;
  MeanStd rounds_to_threshold;
  MeanStd time_to_threshold;
  MeanStd final_accuracy;
  std::size_t runs = 0;
  std::size_t reached = 0;  // runs that hit the threshold
};

struct Comparison {
  double threshold = 0.0;
  std::vector<SchemeComparison> schemes;
};

// First row whose loss is at or below `threshold`; rows.size() when none.
inline std::size_t first_at_or_below(const std::vector<MetricsRow>& rows, double threshold) {
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].loss <= threshold) return i;
  return rows.size();
}

// Default threshold: the largest per-run minimum loss, so every run reaches it.
inline double common_threshold(const std::vector<MetricsFile>& files) {
  double t = -std::numeric_limits<double>::infinity();
  for (const auto& f : files) {
    double lo = std::numeric_limits<double>::infinity();
    for (const auto& r : f.rows) lo = std::min(lo, r.loss);
    t = std::max(t, lo);
  }
  return t;
}

inline Comparison compare_runs(const std::vector<MetricsFile>& files, std::optional<double> threshold = {}) {
  if (files.size() < 2) throw ComparisonError("compare: need at least two metrics files");
  for (const auto& f : files) {
    if (f.id.config_hash != files.front().id.config_hash) {
      throw ComparisonError("compare: config hash " + f.id.config_hash + " (scheme " + f.id.scheme + ", seed " +
                            std::to_string(f.id.seed) + ") differs from " + files.front().id.config_hash);
    }
    if (f.rows.empty()) throw ComparisonError("compare: a metrics file has no rounds");
  }
  Comparison c;
  c.threshold = threshold ? *threshold : common_threshold(files);
  std::map<std::string, std::vector<const MetricsFile*>> by_scheme;
  for (const auto& f : files) by_scheme[f.id.scheme].push_back(&f);
  for (const auto& [scheme, runs] : by_scheme) {
    SchemeComparison s;
    s.scheme = scheme;
    s.runs = runs.size();
    std::vector<double> rounds, times, acc;
    for (const auto* f : runs) {
      acc.push_back(f->rows.back().test_accuracy);
      const std::size_t i = first_at_or_below(f->rows, c.threshold);
      if (i == f->rows.size()) continue;
      ++s.reached;
      rounds.push_back(static_cast<double>(f->rows[i].round));
      times.push_back(f->rows[i].cum_delay);
    }
    s.rounds_to_threshold = mean_std(rounds);
    s.time_to_threshold = mean_std(times);
    s.final_accuracy = mean_std(acc);
    c.schemes.push_back(s);
  }
  return c;
}

inline void print_comparison(std::ostream& out, const Comparison& c) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "loss threshold %.6g\n", c.threshold);
  out << buf;
  std::snprintf(buf, sizeof buf, "%-16s %5s %7s  %-21s %-21s %-21s\n", "scheme", "runs", "reached",
                "rounds_to_threshold", "time_to_threshold_s", "final_accuracy");
  out << buf;
  for (const auto& s : c.schemes) {
    std::snprintf(buf, sizeof buf, "%-16s %5zu %7zu  %9.3f +- %-8.3f %9.3f +- %-8.3f %9.4f +- %-8.4f\n",
                  s.scheme.c_str(), s.runs, s.reached, s.rounds_to_threshold.mean, s.rounds_to_threshold.std,
                  s.time_to_threshold.mean, s.time_to_threshold.std, s.final_accuracy.mean, s.final_accuracy.std);
    out << buf;
  }
}

}  // namespace bwfl
