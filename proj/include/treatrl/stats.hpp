#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace treatrl {

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Nearest-rank percentile of an ascending sample: the value at rank
// ceil(p/100 * n).
inline double nearest_rank_percentile(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("percentile of empty sample");
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// 1-based midranks; tied values share the average of their ranks.
inline std::vector<double> midranks(std::span<const double> x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("pearson needs paired samples of size >= 2");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  const auto rx = midranks(x);
  const auto ry = midranks(y);
  return pearson(rx, ry);
}

enum class Alternative {
  Less,    // sample_a stochastically smaller than sample_b
  Greater  // sample_a stochastically larger than sample_b
};

struct RankSumResult {
  double u = 0.0;  // Mann-Whitney U of sample_a: #(a > b) + 0.5 #(a == b)
  double p_value = 1.0;
  bool exact = false;
};

namespace detail {

// counts[u] = number of arrangements of m a's and n b's with U_a = u, via
// f(m, n, u) = f(m - 1, n, u - n) + f(m, n - 1, u).
inline std::vector<double> mann_whitney_counts(int m, int n) {
  std::vector<std::vector<std::vector<double>>> f(
      m + 1, std::vector<std::vector<double>>(n + 1));
  for (int i = 0; i <= m; ++i) {
    for (int j = 0; j <= n; ++j) {
      f[i][j].assign(static_cast<std::size_t>(i * j + 1), 0.0);
      if (i == 0 || j == 0) {
        f[i][j][0] = 1.0;
        continue;
      }
      for (int u = 0; u <= i * j; ++u) {
        double c = 0.0;
        if (u - j >= 0 && u - j <= (i - 1) * j) c += f[i - 1][j][static_cast<std::size_t>(u - j)];
        if (u <= i * (j - 1)) c += f[i][j - 1][static_cast<std::size_t>(u)];
        f[i][j][static_cast<std::size_t>(u)] = c;
      }
    }
  }
  return f[m][n];
}

}  // namespace detail

// One-sided Wilcoxon rank-sum (Mann-Whitney) test. Exact null distribution
// when n_a + n_b <= 12 and there are no ties; otherwise the normal
// approximation with tie-corrected variance. The continuity correction is
// min(0.5, |U - mean|), so a statistic sitting at its null mean gives p = 0.5.
inline RankSumResult rank_sum_test(std::span<const double> a, std::span<const double> b,
                                   Alternative alt = Alternative::Less) {
  if (a.empty() || b.empty()) throw std::invalid_argument("rank_sum_test needs two nonempty samples");
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto ranks = midranks(pooled);
  double ra = 0.0;
  for (std::size_t i = 0; i < na; ++i) ra += ranks[i];

  RankSumResult res;
  res.u = ra - static_cast<double>(na) * static_cast<double>(na + 1) / 2.0;

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  bool ties = false;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && sorted[j + 1] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    if (t > 1) ties = true;
    tie_term += t * t * t - t;
    i = j + 1;
  }

  if (n <= 12 && !ties) {
    const auto counts = detail::mann_whitney_counts(static_cast<int>(na), static_cast<int>(nb));
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    const auto uobs = static_cast<std::size_t>(std::llround(res.u));
    double tail = 0.0;
    if (alt == Alternative::Less) {
      for (std::size_t u = 0; u <= uobs; ++u) tail += counts[u];
    } else {
      for (std::size_t u = uobs; u < counts.size(); ++u) tail += counts[u];
    }
    res.p_value = tail / total;
    res.exact = true;
    return res;
  }

  const double dna = static_cast<double>(na), dnb = static_cast<double>(nb), dn = static_cast<double>(n);
  const double mean = dna * dnb / 2.0;
  const double var = dna * dnb / 12.0 * ((dn + 1.0) - tie_term / (dn * (dn - 1.0)));
  if (!(var > 0.0)) {
    res.p_value = 0.5;
    return res;
  }
  const double sd = std::sqrt(var);
  const double cc = std::min(0.5, std::abs(res.u - mean));
  const double z = alt == Alternative::Less ? (res.u - mean + cc) / sd : (mean - res.u + cc) / sd;
  res.p_value = std::clamp(normal_cdf(z), 0.0, 1.0);
  return res;
}

struct ProportionCi {
  double rate = 0.0;
  double low = 0.0;
  double high = 0.0;
  bool agresti_coull = false;
};

// 95% interval for a binomial proportion: Wald when both n*p and n*(1-p) are
// at least 5, Agresti-Coull otherwise.
inline ProportionCi binomial_ci(std::size_t successes, std::size_t n, double z = 1.959963984540054) {
  ProportionCi ci;
  if (n == 0) {
    ci.rate = ci.low = ci.high = std::nan("");
    return ci;
  }
  const double dn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / dn;
  ci.rate = p;
  if (dn * p >= 5.0 && dn * (1.0 - p) >= 5.0) {
    const double half = z * std::sqrt(p * (1.0 - p) / dn);
    ci.low = p - half;
    ci.high = p + half;
  } else {
    const double nt = dn + z * z;
    const double pt = (static_cast<double>(successes) + z * z / 2.0) / nt;
    const double half = z * std::sqrt(pt * (1.0 - pt) / nt);
    ci.low = pt - half;
    ci.high = pt + half;
    ci.agresti_coull = true;
  }
  ci.low = std::clamp(ci.low, 0.0, 1.0);
  ci.high = std::clamp(ci.high, 0.0, 1.0);
  return ci;
}

}  // namespace treatrl
