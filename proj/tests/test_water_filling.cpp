#include <algorithm>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "gsot/water_filling.hpp"
#include "oracles/water_filling.hpp"

using namespace gsot;

using oracle::bisection_allocation;

TEST(WaterFilling, SingleFrequencyTakesWholeBudget) {
  WaterFiller wf;
  const auto x = wf.allocate(std::vector<double>{std::exp(1.0)}, 1.0);
  EXPECT_NEAR(x[0], 1.0, 1e-15);
}

TEST(WaterFilling, ThreeFrequencyHandExample) {
  WaterFiller wf;
  const std::vector<double> z{1.0, std::exp(1.0), std::exp(2.0)};
  const auto x = wf.allocate(z, 1.0);
  EXPECT_NEAR(x[0], 0.0, 1e-15);
  EXPECT_NEAR(x[1], 0.0, 1e-15);
  EXPECT_NEAR(x[2], 1.0, 1e-15);
  EXPECT_NEAR(wf.last_log_nu(), 1.0, 1e-15);
  EXPECT_EQ(wf.last_breakpoint(), 1u);

  // budget function at the sorted values: g(1) = 2 > 0, g(e) = 0 <= 0
  auto g = [&](double nu) {
    double s = 0.0;
    for (double v : z) s += std::max(std::log(v) - std::log(nu), 0.0);
    return s - 1.0;
  };
  EXPECT_NEAR(g(1.0), 2.0, 1e-15);
  EXPECT_LE(g(std::exp(1.0)), 1e-15);

  const auto ref = bisection_allocation(z, 1.0);
  for (std::size_t f = 0; f < 3; ++f) EXPECT_NEAR(x[f], ref[f], 1e-12);
}

TEST(WaterFilling, ZeroBudgetGivesNothing) {
  WaterFiller wf;
  const auto x = wf.allocate(std::vector<double>{0.3, 2.0, 5.0}, 0.0);
  for (double v : x) EXPECT_EQ(v, 0.0);
}

TEST(WaterFilling, ZeroEntriesNeverReceiveBudget) {
  WaterFiller wf;
  const auto x = wf.allocate(std::vector<double>{0.0, 2.0, 0.0, 0.5}, 3.0);
  EXPECT_EQ(x[0], 0.0);
  EXPECT_EQ(x[2], 0.0);
  EXPECT_NEAR(x[1] + x[3], 3.0, 1e-14);
  const auto none = wf.allocate(std::vector<double>{0.0, 0.0}, 3.0);
  EXPECT_EQ(none[0], 0.0);
  EXPECT_EQ(none[1], 0.0);
}

TEST(WaterFilling, TiesAreSplitEvenly) {
  WaterFiller wf;
  const auto x = wf.allocate(std::vector<double>{2.0, 2.0, 2.0, 0.1}, 1.5);
  EXPECT_NEAR(x[0], 0.5, 1e-14);
  EXPECT_NEAR(x[1], 0.5, 1e-14);
  EXPECT_NEAR(x[2], 0.5, 1e-14);
  EXPECT_EQ(x[3], 0.0);
}

TEST(WaterFilling, MatchesBisectionOnRandomInstances) {
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> nf(1, 12);
  std::normal_distribution<double> logz(0.0, 3.0);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  WaterFiller wf;
  double worst = 0.0;
  for (int inst = 0; inst < 10000; ++inst) {
    const int F = nf(rng);
    std::vector<double> z(static_cast<std::size_t>(F));
    for (auto& v : z) {
      const double p = U(rng);
      v = p < 0.15 ? 0.0 : std::exp(logz(rng));
    }
    // inject ties
    if (F > 2 && U(rng) < 0.3) z[1] = z[0];
    const double budget = std::exp(-7.0 + 11.0 * U(rng));
    const auto x = wf.allocate(z, budget);
    const auto ref = bisection_allocation(z, budget);
    double sum = 0.0;
    bool any = false;
    for (std::size_t f = 0; f < z.size(); ++f) {
      worst = std::max(worst, std::abs(x[f] - ref[f]));
      EXPECT_GE(x[f], 0.0);
      if (z[f] == 0.0) {
        EXPECT_EQ(x[f], 0.0);
      }
      sum += x[f];
      any = any || z[f] > 0.0;
    }
    if (any) {
      EXPECT_NEAR(sum, budget, 1e-12 * std::max(1.0, budget));
    }
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(WaterFilling, PermutationEquivariant) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> U(0.01, 10.0);
  WaterFiller wf;
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> z(7);
    for (auto& v : z) v = U(rng);
    z[3] = z[5];
    std::vector<std::size_t> perm(7);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> zp(7);
    for (std::size_t k = 0; k < 7; ++k) zp[k] = z[perm[k]];
    const auto x = wf.allocate(z, 2.0);
    const auto xp = wf.allocate(zp, 2.0);
    for (std::size_t k = 0; k < 7; ++k) EXPECT_NEAR(xp[k], x[perm[k]], 1e-13);
  }
}

TEST(WaterFilling, AllocationMinimizesTheBlockObjective) {
  // sum_f z_f exp(-x_f) at the allocation is no larger than at random
  // feasible points of the simplex face sum x = budget.
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  WaterFiller wf;
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> z(5);
    for (auto& v : z) v = std::exp(4.0 * U(rng) - 2.0);
    const double budget = 3.0 * U(rng);
    const auto x = wf.allocate(z, budget);
    auto obj = [&](const std::vector<double>& y) {
      double s = 0.0;
      for (std::size_t f = 0; f < 5; ++f) s += z[f] * std::exp(-y[f]);
      return s;
    };
    const double best = obj(x);
    for (int k = 0; k < 50; ++k) {
      std::vector<double> y(5);
      double s = 0.0;
      for (auto& v : y) s += (v = -std::log(U(rng) + 1e-300));
      for (auto& v : y) v *= budget / s;
      EXPECT_LE(best, obj(y) + 1e-12);
    }
  }
}
