#pragma once

#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "bwfl/bound.hpp"
#include "bwfl/qnn.hpp"
#include "bwfl/random.hpp"
#include "bwfl/rl.hpp"
#include "bwfl/wireless.hpp"

namespace bwfl {

struct SelfTestResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Quick randomized property checks of the core numerics, for a sanity pass
// on a new machine. The full suite lives in the test binaries.
inline std::vector<SelfTestResult> run_selftest(std::uint64_t seed = 7) {
  std::vector<SelfTestResult> out;
  Rng rng = make_rng(seed, Stream::synthetic);
  std::uniform_real_distribution<double> w(-1.0, 1.0);

  {
    double worst = 0.0;
    bool ok = true;
    for (int alpha = 2; alpha <= 8; ++alpha) {
      const double tol = 0.5 / grid_levels(alpha) + 1e-12;
      for (int i = 0; i < 10000; ++i) {
        const double x = w(rng);
        const double q = quantize(x, alpha, 32);
        worst = std::max(worst, std::abs(q - x) / tol);
        ok = ok && std::abs(q - x) <= tol && quantize(q, alpha, 32) == q;
      }
    }
    out.push_back({"quantizer error bound and idempotence", ok, "worst error / bound = " + std::to_string(worst)});
  }
  {
    double worst = 0.0;
    for (int alpha : {2, 4, 8}) {
      for (int i = 0; i < 500; ++i) {
        std::vector<double> a(37), b(37);
        for (auto& x : a) x = quantize(w(rng), alpha, 32);
        for (auto& x : b) x = quantize(w(rng), alpha, 32);
        double ref = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) ref += a[k] * b[k];
        worst = std::max(worst, std::abs(bitplane_inner_product(a, b, alpha) - ref));
      }
    }
    out.push_back({"bit-plane inner product", worst <= 1e-9, "max abs error = " + std::to_string(worst)});
  }
  {
    NetworkConfig net;
    DeviceProfile p;
    bool ok = delay_quantize(1, 32, net.model_size, p) == 0.0 && delay_quantize(32, 32, net.model_size, p) == 0.0;
    const double base = delay_compute(1, p, net.mult_ops);
    for (int a = 1; a <= 8; ++a) ok = ok && std::abs(delay_compute(a, p, net.mult_ops) - a * a * base) <= 1e-12 * a * a * base;
    out.push_back({"delay model", ok, ""});
  }
  {
    BoundFeatures f{2.5, 100.0, 100.0, 32, 4, 32};
    BoundParams p;
    p.L = 3.0;
    const bool ok = bound_step(f, p) == -2.5 / 6.0;
    out.push_back({"bound descent case", ok, "K = " + std::to_string(bound_step(f, p))});
  }
  {
    std::vector<std::size_t> counts{10, 20, 30};
    PolicyParams pol = make_policy(counts, {1, 4, 32});
    std::normal_distribution<double> n(0.0, 1.0);
    for (double& t : pol.theta) t = n(rng);
    const StateSpace space{5, 1.0};
    const std::vector<std::uint8_t> u{1, 0, 1};
    const auto g = grad_log_prob(pol, 3, space, u, 1);
    double worst = 0.0;
    for (std::size_t i = 0; i < pol.theta.size(); ++i) {
      PolicyParams hi = pol, lo = pol;
      hi.theta[i] += 1e-6;
      lo.theta[i] -= 1e-6;
      const double fd = (log_prob(hi, 3, space, u, 1) - log_prob(lo, 3, space, u, 1)) / 2e-6;
      worst = std::max(worst, std::abs(fd - g[i]));
    }
    out.push_back({"policy log-probability gradient", worst <= 1e-6, "max abs error = " + std::to_string(worst)});
  }
  return out;
}

}  // namespace bwfl
