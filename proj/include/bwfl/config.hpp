#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "bwfl/bound.hpp"
#include "bwfl/error.hpp"

namespace bwfl {

enum class Scheme { proposed, model_free, binary, full_precision, fixed };

inline const char* to_string(Scheme s) {
  switch (s) {
    case Scheme::proposed: return "proposed";
    case Scheme::model_free: return "model_free";
    case Scheme::binary: return "binary";
    case Scheme::full_precision: return "full_precision";
    case Scheme::fixed: return "fixed";
  }
  return "?";
}

inline Scheme parse_scheme(const std::string& s) {
  if (s == "proposed") return Scheme::proposed;
  if (s == "model_free") return Scheme::model_free;
  if (s == "binary") return Scheme::binary;
  if (s == "full_precision") return Scheme::full_precision;
  if (s == "fixed") return Scheme::fixed;
  throw ConfigError("experiment.scheme: unknown scheme '" + s +
                    "' (expected proposed, model_free, binary, full_precision or fixed)");
}

// Every tunable of an experiment. Defaults follow the reference simulation
// table; see configs/ for the scaled desk profile.
struct ExperimentConfig {
  // [experiment]
  Scheme scheme = Scheme::proposed;
  std::uint64_t seed = 1;
  std::vector<int> seeds;  // sweep; empty = just `seed`
  std::size_t rounds = 100;
  int fixed_alpha = 8;
  std::string output = "runs";

  // [data]
  std::string source = "idx";  // idx | synthetic
  std::string images = "data/mnist5k-images-idx3-ubyte";
  std::string labels = "data/mnist5k-labels-idx1-ubyte";
  std::size_t synthetic_classes = 10;
  std::size_t synthetic_dim = 16;
  std::size_t synthetic_per_class = 100;
  double test_fraction = 0.1;
  std::string partition = "noniid";  // iid | noniid
  std::size_t labels_per_device = 3;
  std::size_t samples_per_device = 200;
  std::size_t minibatch = 0;

  // [model]
  std::vector<int> hidden{256, 64};
  double lambda = 1e-3;
  int V = 32;

  // [network]
  std::size_t devices = 15;
  std::size_t rb_count = 6;
  double delay_budget = 1.0;
  double bandwidth = 15e3;
  double noise_dbm = -174.0;
  double tx_power = 0.5;
  double cpu_hz = 3.3e9;
  double bits_per_cycle = 64;
  double rho = 2.8e6;
  double model_size = 0;  // 0 = the model's parameter count
  double mult_ops = 0;    // 0 = the model's parameter count
  double path_gain_ref = 1e-3;
  double ref_distance = 1.0;
  double cell_radius = 1500.0;
  double min_distance = 10.0;
  bool rayleigh = true;

  // [rl]
  std::size_t levels = 20;
  double f_max = 0.0;
  std::vector<int> bitwidths{1, 2, 4, 8, 16, 32};
  std::size_t explore_rounds = 20;
  std::size_t planning_iterations = 500;
  std::size_t trajectories = 8;
  std::size_t horizon = 10;
  double iota = 0.02;
  bool baseline = false;
  std::size_t episode_length = 10;
  bool tie_equal_devices = true;
  std::size_t reestimate_every = 0;

  // [estimator]
  std::string mode = "convex";
  double rate_L = 0.02;
  double rate_zeta1 = 0.02;
  double rate_zeta2 = 0.02;
  double rate_beps = 0.02;
  double rate_ups = 0.02;
  std::size_t estimator_steps = 20000;
  std::size_t restarts = 8;

  // [convergence]
  std::size_t window = 20;
  double variance_threshold = 1e-3;
  bool stop_on_convergence = true;
};

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

template <typename T>
T parse_integer(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError(field + ": expected an integer, got '" + text + "'");
  }
  return v;
}

inline double parse_double(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size() || !std::isfinite(v)) throw std::invalid_argument(t);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(field + ": expected a number, got '" + text + "'");
  }
}

inline bool parse_bool(const std::string& field, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(field + ": expected true or false, got '" + text + "'");
}

inline std::vector<int> parse_int_list(const std::string& field, const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_integer<int>(field, item));
  }
  return out;
}

inline std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Field {
  std::string name;  // section.key
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
  bool hashed = true;
};

inline std::vector<Field> fields(ExperimentConfig& c) {
  std::vector<Field> f;
  auto add_size = [&](const char* n, std::size_t& v) {
    f.push_back({n, [&v, n](const std::string& s) { v = parse_integer<std::size_t>(n, s); },
                 [&v] { return std::to_string(v); }});
  };
  auto add_int = [&](const char* n, int& v) {
    f.push_back({n, [&v, n](const std::string& s) { v = parse_integer<int>(n, s); },
                 [&v] { return std::to_string(v); }});
  };
  auto add_double = [&](const char* n, double& v) {
    f.push_back({n, [&v, n](const std::string& s) { v = parse_double(n, s); },
                 [&v] { return format_double(v); }});
  };
  auto add_bool = [&](const char* n, bool& v) {
    f.push_back({n, [&v, n](const std::string& s) { v = parse_bool(n, s); },
                 [&v] { return std::string(v ? "true" : "false"); }});
  };
  auto add_string = [&](const char* n, std::string& v) {
    f.push_back({n, [&v](const std::string& s) { v = trim(s); }, [&v] { return v; }});
  };
  auto add_list = [&](const char* n, std::vector<int>& v) {
    f.push_back({n, [&v, n](const std::string& s) { v = parse_int_list(n, s); },
                 [&v] { return join(v); }});
  };

  f.push_back({"experiment.scheme", [&c](const std::string& s) { c.scheme = parse_scheme(trim(s)); },
               [&c] { return std::string(to_string(c.scheme)); }, false});
  f.push_back({"experiment.seed",
               [&c](const std::string& s) { c.seed = parse_integer<std::uint64_t>("experiment.seed", s); },
               [&c] { return std::to_string(c.seed); }, false});
  f.push_back({"experiment.seeds", [&c](const std::string& s) { c.seeds = parse_int_list("experiment.seeds", s); },
               [&c] { return join(c.seeds); }, false});
  add_size("experiment.rounds", c.rounds);
  add_int("experiment.fixed_alpha", c.fixed_alpha);
  f.push_back({"experiment.output", [&c](const std::string& s) { c.output = trim(s); }, [&c] { return c.output; },
               false});

  add_string("data.source", c.source);
  add_string("data.images", c.images);
  add_string("data.labels", c.labels);
  add_size("data.synthetic_classes", c.synthetic_classes);
  add_size("data.synthetic_dim", c.synthetic_dim);
  add_size("data.synthetic_per_class", c.synthetic_per_class);
  add_double("data.test_fraction", c.test_fraction);
  add_string("data.partition", c.partition);
  add_size("data.labels_per_device", c.labels_per_device);
  add_size("data.samples_per_device", c.samples_per_device);
  add_size("data.minibatch", c.minibatch);

  add_list("model.hidden", c.hidden);
  add_double("model.lambda", c.lambda);
  add_int("model.V", c.V);

  add_size("network.devices", c.devices);
  add_size("network.rb_count", c.rb_count);
  add_double("network.delay_budget", c.delay_budget);
  add_double("network.bandwidth", c.bandwidth);
  add_double("network.noise_dbm", c.noise_dbm);
  add_double("network.tx_power", c.tx_power);
  add_double("network.cpu_hz", c.cpu_hz);
  add_double("network.bits_per_cycle", c.bits_per_cycle);
  add_double("network.rho", c.rho);
  add_double("network.model_size", c.model_size);
  add_double("network.mult_ops", c.mult_ops);
  add_double("network.path_gain_ref", c.path_gain_ref);
  add_double("network.ref_distance", c.ref_distance);
  add_double("network.cell_radius", c.cell_radius);
  add_double("network.min_distance", c.min_distance);
  add_bool("network.rayleigh", c.rayleigh);

  add_size("rl.levels", c.levels);
  add_double("rl.f_max", c.f_max);
  add_list("rl.bitwidths", c.bitwidths);
  add_size("rl.explore_rounds", c.explore_rounds);
  add_size("rl.planning_iterations", c.planning_iterations);
  add_size("rl.trajectories", c.trajectories);
  add_size("rl.horizon", c.horizon);
  add_double("rl.iota", c.iota);
  add_bool("rl.baseline", c.baseline);
  add_size("rl.episode_length", c.episode_length);
  add_bool("rl.tie_equal_devices", c.tie_equal_devices);
  add_size("rl.reestimate_every", c.reestimate_every);

  add_string("estimator.mode", c.mode);
  add_double("estimator.rate_L", c.rate_L);
  add_double("estimator.rate_zeta1", c.rate_zeta1);
  add_double("estimator.rate_zeta2", c.rate_zeta2);
  add_double("estimator.rate_beps", c.rate_beps);
  add_double("estimator.rate_ups", c.rate_ups);
  add_size("estimator.steps", c.estimator_steps);
  add_size("estimator.restarts", c.restarts);

  add_size("convergence.window", c.window);
  add_double("convergence.variance_threshold", c.variance_threshold);
  add_bool("convergence.stop", c.stop_on_convergence);
  return f;
}

}  // namespace detail

// Sets one field by its dotted name ("network.devices").
inline void set_field(ExperimentConfig& c, const std::string& name, const std::string& value) {
  for (auto& f : detail::fields(c)) {
    if (f.name == name) {
      f.set(value);
      return;
    }
  }
  throw ConfigError(name + ": unknown configuration key");
}

inline std::string get_field(ExperimentConfig c, const std::string& name) {
  for (auto& f : detail::fields(c))
    if (f.name == name) return f.get();
  throw ConfigError(name + ": unknown configuration key");
}

// "key=value" from the command line.
inline void apply_override(ExperimentConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set_field(c, detail::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

inline void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (c.rounds < 1) fail("experiment.rounds: must be >= 1");
  if (c.devices < 1) fail("network.devices: must be >= 1");
  if (c.rb_count < 1) fail("network.rb_count: must be >= 1");
  if (c.rb_count > c.devices) {
    fail("network.rb_count: U=" + std::to_string(c.rb_count) + " exceeds network.devices M=" +
         std::to_string(c.devices));
  }
  if (c.V < 2 || c.V > 32) fail("model.V: must be in [2, 32]");
  if (c.fixed_alpha < 1 || c.fixed_alpha > c.V) fail("experiment.fixed_alpha: must be in [1, V]");
  if (!(c.lambda > 0.0)) fail("model.lambda: must be > 0");
  for (int h : c.hidden)
    if (h < 1) fail("model.hidden: layer widths must be >= 1");
  if (c.source != "idx" && c.source != "synthetic") fail("data.source: expected idx or synthetic");
  if (c.partition != "iid" && c.partition != "noniid") fail("data.partition: expected iid or noniid");
  if (c.test_fraction < 0.0 || c.test_fraction >= 1.0) fail("data.test_fraction: must be in [0, 1)");
  if (c.partition == "noniid" && c.labels_per_device < 1) fail("data.labels_per_device: must be >= 1");
  if (c.synthetic_classes < 2) fail("data.synthetic_classes: must be >= 2");
  if (c.synthetic_dim < 1) fail("data.synthetic_dim: must be >= 1");
  for (double v : {c.delay_budget, c.bandwidth, c.tx_power, c.cpu_hz, c.bits_per_cycle, c.rho, c.path_gain_ref,
                   c.ref_distance, c.cell_radius, c.min_distance}) {
    if (!(v > 0.0)) fail("network: delay_budget, bandwidth, tx_power, cpu_hz, bits_per_cycle, rho, "
                         "path_gain_ref, ref_distance, cell_radius and min_distance must all be > 0");
  }
  if (c.min_distance > c.cell_radius) fail("network.min_distance: exceeds network.cell_radius");
  if (c.model_size < 0.0) fail("network.model_size: must be >= 0");
  if (c.mult_ops < 0.0) fail("network.mult_ops: must be >= 0");
  if (c.levels < 2) fail("rl.levels: must be >= 2");
  if (c.f_max < 0.0) fail("rl.f_max: must be >= 0");
  if (c.bitwidths.empty()) fail("rl.bitwidths: must not be empty");
  for (std::size_t j = 0; j < c.bitwidths.size(); ++j) {
    if (c.bitwidths[j] < 1 || c.bitwidths[j] > c.V) fail("rl.bitwidths: entries must be in [1, V]");
    if (j > 0 && c.bitwidths[j] <= c.bitwidths[j - 1]) fail("rl.bitwidths: must be strictly increasing");
  }
  if (!(c.iota > 0.0)) fail("rl.iota: must be > 0");
  if (c.trajectories < 1) fail("rl.trajectories: must be >= 1");
  if (c.horizon < 1) fail("rl.horizon: must be >= 1");
  if (c.episode_length < 1) fail("rl.episode_length: must be >= 1");
  if (c.scheme == Scheme::proposed && c.explore_rounds < 1) fail("rl.explore_rounds: must be >= 1");
  if (c.mode != "convex" && c.mode != "nonconvex") fail("estimator.mode: expected convex or nonconvex");
  for (double r : {c.rate_L, c.rate_zeta1, c.rate_zeta2, c.rate_beps, c.rate_ups})
    if (!(r > 0.0)) fail("estimator: learning rates must be > 0");
  if (c.window < 2) fail("convergence.window: must be >= 2");
  if (!(c.variance_threshold > 0.0)) fail("convergence.variance_threshold: must be > 0");
}

// Reads an INI file over the defaults. Relative data paths are resolved
// against the file's directory.
inline ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig c = {}) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  for (const auto& [section, body] : tree) {
    if (!body.data().empty()) throw ConfigError(section + ": keys must live inside a [section]");
    for (const auto& [key, value] : body) set_field(c, section + "." + key, value.get_value<std::string>());
  }
  const auto base = path.parent_path();
  auto resolve = [&](const char* key, std::string& p) {
    if (tree.get_child_optional(std::string("data.") + key) && std::filesystem::path(p).is_relative()) {
      p = (base / p).lexically_normal().string();
    }
  };
  resolve("images", c.images);
  resolve("labels", c.labels);
  return c;
}

// section.key=value lines, sorted; excludes run identity (scheme, seeds, output).
inline std::string canonical_config(ExperimentConfig c) {
  std::map<std::string, std::string> kv;
  for (auto& f : detail::fields(c))
    if (f.hashed) kv[f.name] = f.get();
  std::string s;
  for (const auto& [k, v] : kv) s += k + "=" + v + "\n";
  return s;
}

inline std::string dump_config(ExperimentConfig c) {
  std::string s;
  for (auto& f : detail::fields(c)) s += f.name + "=" + f.get() + "\n";
  return s;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string config_hash(const ExperimentConfig& c) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical_config(c))));
  return buf;
}

inline BoundMode bound_mode(const ExperimentConfig& c) {
  return c.mode == "nonconvex" ? BoundMode::nonconvex : BoundMode::convex;
}

}  // namespace bwfl
