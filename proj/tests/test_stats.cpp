#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "treatrl/stats.hpp"

using namespace treatrl;

namespace {

// U of `a` by direct pair counting.
double pair_u(const std::vector<double>& a, const std::vector<double>& b) {
  double u = 0.0;
  for (double x : a) {
    for (double y : b) u += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
  }
  return u;
}

// Enumerates every way of labelling na of the pooled values as sample a.
double permutation_p(const std::vector<double>& a, const std::vector<double>& b, Alternative alt) {
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const int n = static_cast<int>(pooled.size()), na = static_cast<int>(a.size());
  const double u_obs = pair_u(a, b);
  long hits = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (__builtin_popcount(mask) != na) continue;
    std::vector<double> x, y;
    for (int i = 0; i < n; ++i) ((mask >> i) & 1u ? x : y).push_back(pooled[static_cast<std::size_t>(i)]);
    const double u = pair_u(x, y);
    ++total;
    if (alt == Alternative::Less ? u <= u_obs + 1e-12 : u >= u_obs - 1e-12) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

TEST(RankSum, ExactMatchesPermutationEnumeration) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int na = 1; na <= 9; ++na) {
    for (int nb = 1; na + nb <= 10; ++nb) {
      for (int rep = 0; rep < 3; ++rep) {
        std::vector<double> a(static_cast<std::size_t>(na)), b(static_cast<std::size_t>(nb));
        for (auto& v : a) v = g(rng) + 0.3 * rep;
        for (auto& v : b) v = g(rng);
        for (auto alt : {Alternative::Less, Alternative::Greater}) {
          const auto r = rank_sum_test(a, b, alt);
          EXPECT_TRUE(r.exact);
          EXPECT_NEAR(r.p_value, permutation_p(a, b, alt), 1e-12) << na << "," << nb;
          EXPECT_DOUBLE_EQ(r.u, pair_u(a, b));
        }
      }
    }
  }
}

TEST(RankSum, MostExtremeOfTwenty) {
  const std::vector<double> a{1, 2, 3}, b{4, 5, 6};
  EXPECT_DOUBLE_EQ(rank_sum_test(a, b, Alternative::Less).p_value, 0.05);
  EXPECT_DOUBLE_EQ(rank_sum_test(a, b, Alternative::Greater).p_value, 1.0);
}

TEST(RankSum, IdenticalSamplesGiveOneHalf) {
  const std::vector<double> a{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13};
  EXPECT_DOUBLE_EQ(rank_sum_test(a, a).p_value, 0.5);
  const std::vector<double> c(40, 2.5);
  EXPECT_DOUBLE_EQ(rank_sum_test(c, c).p_value, 0.5);
}

TEST(RankSum, NormalApproximationOracle) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> a(100), b(100);
  for (auto& v : a) v = g(rng);
  for (auto& v : b) v = g(rng) + 3.0;
  const auto r = rank_sum_test(a, b, Alternative::Less);
  EXPECT_FALSE(r.exact);
  EXPECT_LT(r.p_value, 1e-10);

  // tie-free normal approximation with continuity correction 0.5
  const double u = pair_u(a, b), mean = 5000.0, sd = std::sqrt(100.0 * 100.0 * 201.0 / 12.0);
  EXPECT_NEAR(r.p_value, 0.5 * std::erfc(-((u - mean + 0.5) / sd) / std::sqrt(2.0)), 1e-15);
}

TEST(RankSum, TieCorrectedVariance) {
  const std::vector<double> a{1, 1, 2, 2, 3, 3, 3, 4}, b{2, 3, 4, 4, 5, 5, 6, 6, 6};
  const double u = pair_u(a, b);
  const double n = 17, na = 8, nb = 9;
  // tie groups in the pooled sample: 1x2, 2x3, 3x4, 4x3, 5x2, 6x3
  const double ties = (8 - 2) + (27 - 3) + (64 - 4) + (27 - 3) + (8 - 2) + (27 - 3);
  const double var = na * nb / 12.0 * ((n + 1) - ties / (n * (n - 1)));
  const double z = (u - na * nb / 2.0 + 0.5) / std::sqrt(var);
  EXPECT_NEAR(rank_sum_test(a, b).p_value, 0.5 * std::erfc(-z / std::sqrt(2.0)), 1e-15);
}

TEST(RankSum, EmptySampleIsAnError) {
  const std::vector<double> a{1.0}, none;
  EXPECT_THROW(rank_sum_test(a, none), std::invalid_argument);
}

TEST(Percentile, NearestRank) {
  const std::vector<double> v{10, 20, 30, 40, 50};
  EXPECT_EQ(nearest_rank_percentile(v, 0.5), 10);
  EXPECT_EQ(nearest_rank_percentile(v, 20), 10);
  EXPECT_EQ(nearest_rank_percentile(v, 20.0001), 20);
  EXPECT_EQ(nearest_rank_percentile(v, 99.5), 50);
  EXPECT_EQ(median({3.0, 1.0, 2.0, 10.0}), 2.5);
}

TEST(Correlation, SpearmanUsesMidranks) {
  const std::vector<double> x{1, 2, 3, 4, 5}, y{5, 6, 7, 8, 7};
  // ranks y: 1, 2, 3.5, 5, 3.5
  const std::vector<double> ry{1, 2, 3.5, 5, 3.5};
  EXPECT_EQ(midranks(y), ry);
  const std::vector<double> rx{1, 2, 3, 4, 5};
  EXPECT_NEAR(spearman(x, y), pearson(rx, ry), 1e-15);
  const std::vector<double> down{9, 7, 5, 3, 1};
  EXPECT_NEAR(spearman(x, down), -1.0, 1e-15);
}

TEST(BinomialCi, WaldAndAgrestiCoull) {
  const auto w = binomial_ci(30, 100);
  EXPECT_FALSE(w.agresti_coull);
  EXPECT_NEAR(w.low, 0.3 - 1.959963984540054 * std::sqrt(0.21 / 100), 1e-15);
  const auto ac = binomial_ci(2, 20);
  EXPECT_TRUE(ac.agresti_coull);
  const double z2 = 1.959963984540054 * 1.959963984540054, nt = 20 + z2, pt = (2 + z2 / 2) / nt;
  EXPECT_NEAR(ac.high, pt + 1.959963984540054 * std::sqrt(pt * (1 - pt) / nt), 1e-15);
  const auto zero = binomial_ci(0, 10);
  EXPECT_EQ(zero.low, 0.0);
  EXPECT_GT(zero.high, 0.0);
  EXPECT_TRUE(std::isnan(binomial_ci(0, 0).rate));
}
