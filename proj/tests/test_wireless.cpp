#include <gtest/gtest.h>

#include <cmath>

#include "bwfl/wireless.hpp"

using namespace bwfl;

namespace {

NetworkConfig small_net() {
  NetworkConfig net;
  net.rb_count = 2;
  net.delay_budget_s = 1.0;
  net.model_size = 1000;
  net.mult_ops = 1000;
  net.bandwidth_hz = 1e4;
  net.noise_w = 1e-10;
  return net;
}

std::vector<DeviceProfile> profiles(std::size_t M) {
  std::vector<DeviceProfile> p(M);
  for (std::size_t m = 0; m < M; ++m) {
    p[m].rho = 1e5 * static_cast<double>(m + 1);
    p[m].cpu_hz = 1e9;
    p[m].bits_per_cycle = 64;
    p[m].tx_power_w = 0.1;
  }
  return p;
}

}  // namespace

TEST(Delay, QuantizationDelayEndpointsAreZero) {
  const DeviceProfile p;
  EXPECT_EQ(delay_quantize(1, 32, 217728, p), 0.0);
  EXPECT_EQ(delay_quantize(32, 32, 217728, p), 0.0);
  EXPECT_DOUBLE_EQ(delay_quantize(8, 32, 217728, p), 217728 / (64 * 3.3e9));
  EXPECT_THROW(delay_quantize(0, 32, 1, p), InvalidBitwidth);
  EXPECT_THROW(delay_quantize(33, 32, 1, p), InvalidBitwidth);
}

TEST(Delay, ComputeDelayIsQuadratic) {
  const DeviceProfile p;
  const double base = delay_compute(1, p, 217728);
  EXPECT_DOUBLE_EQ(base, 2.8e6 * 217728 / (64 * 3.3e9));
  for (int a = 1; a <= 8; ++a) EXPECT_NEAR(delay_compute(a, p, 217728), a * a * base, 1e-12 * a * a * base);
  // Constant second difference 2 * base.
  for (int a = 2; a <= 7; ++a) {
    const double d2 = delay_compute(a + 1, p, 217728) - 2 * delay_compute(a, p, 217728) + delay_compute(a - 1, p, 217728);
    EXPECT_NEAR(d2, 2 * base, 1e-9 * base);
  }
  EXPECT_THROW(delay_compute(0, p, 1), InvalidBitwidth);
}

TEST(Delay, CapacityAndTransmit) {
  EXPECT_EQ(capacity(false, 1.0, 1e4, 1.0, 1.0), 0.0);
  // SNR 1 gives one bit per second per hertz.
  EXPECT_DOUBLE_EQ(capacity(true, 2.0, 1e4, 0.5, 1.0), 1e4);
  EXPECT_DOUBLE_EQ(capacity(true, 3.0, 100, 1.0, 1.0), 200);
  EXPECT_EQ(delay_transmit(false, 8, 1000, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(delay_transmit(true, 8, 1000, 4000), 2.0);
  EXPECT_THROW(delay_transmit(true, 8, 1000, 0.0), InfeasibleLink);
}

TEST(Delay, DbmConversion) {
  EXPECT_DOUBLE_EQ(dbm_to_watts(30), 1.0);
  EXPECT_NEAR(dbm_to_watts(-174) / 3.981071705534969e-21, 1.0, 1e-12);
}

TEST(Delay, IterationDelayIsSlowestSelected) {
  const auto net = small_net();
  const auto p = profiles(3);
  const std::vector<double> h{1e-6, 1e-6, 1e-6};
  Action a{{1, 0, 1}, 4};
  const double d0 = device_delay(4, p[0], h[0], net), d2 = device_delay(4, p[2], h[2], net);
  EXPECT_EQ(iteration_delay(a, p, h, net), std::max(d0, d2));
  EXPECT_EQ(iteration_delay(Action{{0, 0, 0}, 4}, p, h, net), 0.0);
  EXPECT_THROW(iteration_delay(Action{{1, 0}, 4}, p, h, net), ShapeError);
  // Oracle: l^C + l^Q + l^T written out.
  const double c = 1e4 * std::log2(1.0 + 0.1 * 1e-6 / 1e-10);
  const double want = 1e5 * 16 * 1000 / (64 * 1e9) + 1000 / (64 * 1e9) + 1000 * 4 / c;
  EXPECT_NEAR(d0, want, 1e-15);
}

TEST(Feasibility, BudgetIsInclusive) {
  auto net = small_net();
  const auto p = profiles(3);
  const std::vector<double> h{1e-6, 1e-6, 1e-6};
  const Action a{{1, 1, 0}, 2};
  const double d = iteration_delay(a, p, h, net);
  net.delay_budget_s = d;
  EXPECT_TRUE(feasible(a, p, h, net).ok);
  net.delay_budget_s = std::nextafter(d, 0.0);
  const auto v = feasible(a, p, h, net);
  EXPECT_FALSE(v.ok);
  EXPECT_EQ(v.violation, Violation::delay);
  net.delay_budget_s = 10;
  EXPECT_EQ(feasible(Action{{1, 1, 1}, 2}, p, h, net).violation, Violation::rb_budget);
  EXPECT_EQ(feasible(Action{{1, 0, 0}, 33}, p, h, net).violation, Violation::bitwidth);
}

TEST(Channel, MonteCarloMeanMatchesPathLoss) {
  DeviceProfile p;
  p.distance_m = 250;
  const ChannelModel ch{1e-3, 1.0, true};
  Rng rng = make_rng(5, Stream::channel);
  double s = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) s += channel_gain(p, ch, rng);
  const double expected = 1e-3 / (250.0 * 250.0);
  EXPECT_NEAR(s / n / expected, 1.0, 0.02);
  const ChannelModel fixed{1e-3, 1.0, false};
  EXPECT_EQ(channel_gain(p, fixed, rng), expected);
  p.distance_m = 0;
  EXPECT_THROW(channel_gain(p, fixed, rng), ArgumentError);
}

TEST(Repair, ProducesFeasibleSubsetOfRequest) {
  auto net = small_net();
  net.rb_count = 3;
  const auto p = profiles(6);
  Rng rng = make_rng(6, Stream::scheduler);
  std::uniform_int_distribution<int> bit(0, 1), alpha(1, 32);
  std::uniform_real_distribution<double> gain(1e-8, 1e-5);
  // Budget chosen so single devices are always feasible at alpha = 1.
  net.delay_budget_s = 0.05;
  for (int t = 0; t < 2000; ++t) {
    Action a{std::vector<std::uint8_t>(6), alpha(rng)};
    for (auto& u : a.u) u = static_cast<std::uint8_t>(bit(rng));
    if (a.selected_count() == 0) a.u[0] = 1;
    std::vector<double> h(6);
    for (double& x : h) x = gain(rng);
    const Action r = repair(a, p, h, net);
    ASSERT_TRUE(feasible(r, p, h, net).ok);
    ASSERT_GE(r.selected_count(), 1u);
    ASSERT_LE(r.alpha, a.alpha);
    for (std::size_t m = 0; m < 6; ++m) ASSERT_LE(r.u[m], a.u[m]);
    // A feasible action comes back unchanged.
    ASSERT_EQ(repair(r, p, h, net), r);
  }
}

TEST(Repair, LadderAndInfeasibility) {
  auto net = small_net();
  const auto p = profiles(2);
  const std::vector<double> h{1e-6, 1e-6};
  // Find a budget between the alpha = 4 and alpha = 5 single-device delays.
  net.delay_budget_s = 0.5 * (device_delay(4, p[0], h[0], net) + device_delay(5, p[0], h[0], net));
  const std::vector<int> ladder{1, 2, 4, 8, 16, 32};
  const Action r = repair(Action{{1, 1}, 8}, p, h, net, ladder);
  EXPECT_EQ(r.u, (std::vector<std::uint8_t>{1, 0}));  // device 1 is slower (larger rho)
  EXPECT_EQ(r.alpha, 4);
  EXPECT_EQ(repair(Action{{1, 0}, 8}, p, h, net).alpha, 4);
  net.delay_budget_s = 0.5 * device_delay(1, p[0], h[0], net);
  EXPECT_THROW(repair(Action{{1, 1}, 8}, p, h, net, ladder), EnvironmentInfeasible);
  EXPECT_THROW(repair(Action{{0, 0}, 8}, p, h, net), EmptySelection);
}
