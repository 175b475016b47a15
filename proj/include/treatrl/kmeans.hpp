#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "rng.hpp"

namespace treatrl {

struct KMeansOptions {
  int max_iter = 100;
  double tol = 1e-10;  // relative RSS improvement below which Lloyd stops
  int n_init = 1;      // restarts; the lowest-RSS run wins
};

struct KMeansResult {
  Eigen::MatrixXd centroids;  // k x m
  std::vector<int> labels;
  double rss = 0.0;
  std::vector<double> rss_history;  // RSS after each assignment step
  int iterations = 0;
};

// Index of the nearest centroid; ties go to the lowest index.
inline int nearest_centroid(const Eigen::MatrixXd& centroids, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                            double* dist2 = nullptr) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = (centroids.row(c) - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  if (dist2) *dist2 = best_d;
  return best;
}

namespace detail {

inline Eigen::MatrixXd kmeanspp_init(const Eigen::MatrixXd& pts, int k, Rng& rng) {
  const Eigen::Index n = pts.rows();
  Eigen::MatrixXd c(k, pts.cols());
  std::vector<char> chosen(static_cast<std::size_t>(n), 0);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  Eigen::Index first = pick(rng);
  c.row(0) = pts.row(first);
  chosen[static_cast<std::size_t>(first)] = 1;

  std::vector<double> d2(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) d2[static_cast<std::size_t>(i)] = (pts.row(i) - c.row(0)).squaredNorm();

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int j = 1; j < k; ++j) {
    double total = 0.0;
    for (double v : d2) total += v;
    Eigen::Index next = -1;
    if (total > 0.0) {
      double target = unif(rng) * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[static_cast<std::size_t>(i)];
        if (target <= 0.0 && d2[static_cast<std::size_t>(i)] > 0.0) {
          next = i;
          break;
        }
      }
      if (next < 0) {
        for (Eigen::Index i = n - 1; i >= 0; --i) {
          if (d2[static_cast<std::size_t>(i)] > 0.0) {
            next = i;
            break;
          }
        }
      }
    } else {
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!chosen[static_cast<std::size_t>(i)]) {
          next = i;
          break;
        }
      }
    }
    c.row(j) = pts.row(next);
    chosen[static_cast<std::size_t>(next)] = 1;
    for (Eigen::Index i = 0; i < n; ++i) {
      d2[static_cast<std::size_t>(i)] = std::min(d2[static_cast<std::size_t>(i)], (pts.row(i) - c.row(j)).squaredNorm());
    }
  }
  return c;
}

inline KMeansResult lloyd(const Eigen::MatrixXd& pts, Eigen::MatrixXd centroids, const KMeansOptions& opt) {
  const Eigen::Index n = pts.rows();
  const int k = static_cast<int>(centroids.rows());
  KMeansResult res;
  res.labels.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> dist(static_cast<std::size_t>(n));

  auto assign = [&]() {
    bool changed = false;
    double rss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double d = 0.0;
      const int lab = nearest_centroid(centroids, pts.row(i), &d);
      if (lab != res.labels[static_cast<std::size_t>(i)]) changed = true;
      res.labels[static_cast<std::size_t>(i)] = lab;
      dist[static_cast<std::size_t>(i)] = d;
      rss += d;
    }
    res.rss_history.push_back(rss);
    res.rss = rss;
    return changed;
  };

  bool converged = false;
  for (int it = 0; it < opt.max_iter; ++it) {
    const bool changed = assign();
    res.iterations = it + 1;
    if (it > 0) {
      const double prev = res.rss_history[res.rss_history.size() - 2];
      if (!changed || prev - res.rss <= opt.tol * std::max(prev, 1e-300)) {
        converged = true;
        break;
      }
    }

    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, pts.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int lab = res.labels[static_cast<std::size_t>(i)];
      sums.row(lab) += pts.row(i);
      ++counts[static_cast<std::size_t>(lab)];
    }
    std::vector<char> taken(static_cast<std::size_t>(n), 0);
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        centroids.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
        continue;
      }
      // Empty cluster: re-seed at the point farthest from its centroid.
      Eigen::Index far = -1;
      double far_d = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (!taken[static_cast<std::size_t>(i)] && dist[static_cast<std::size_t>(i)] > far_d) {
          far_d = dist[static_cast<std::size_t>(i)];
          far = i;
        }
      }
      taken[static_cast<std::size_t>(far)] = 1;
      centroids.row(c) = pts.row(far);
      dist[static_cast<std::size_t>(far)] = 0.0;
    }
  }
  if (!converged) assign();
  res.centroids = std::move(centroids);
  return res;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding; deterministic given `seed`.
inline KMeansResult fit_kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, KMeansOptions opt = {}) {
  if (k < 1) throw std::invalid_argument("k must be positive");
  if (points.rows() < k) {
    throw DataError("k-means: " + std::to_string(points.rows()) + " points cannot form " + std::to_string(k) +
                    " clusters");
  }
  KMeansResult best;
  for (int r = 0; r < std::max(1, opt.n_init); ++r) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(r));
    auto res = detail::lloyd(points, detail::kmeanspp_init(points, k, rng), opt);
    if (r == 0 || res.rss < best.rss) best = std::move(res);
  }
  return best;
}

struct AicPoint {
  int k = 0;
  double rss = 0.0;
  double aic = 0.0;
};

// AIC under an isotropic Gaussian with shared MLE variance RSS/(n*m):
// n*m*ln(RSS/(n*m)) + 2*k*m. RSS = 0 yields -infinity.
inline double kmeans_aic(double rss, Eigen::Index n, Eigen::Index m, int k) {
  const double nm = static_cast<double>(n) * static_cast<double>(m);
  if (rss <= 0.0) return -std::numeric_limits<double>::infinity();
  return nm * std::log(rss / nm) + 2.0 * k * static_cast<double>(m);
}

inline std::vector<AicPoint> aic_curve(const Eigen::MatrixXd& points, std::span<const int> k_values, std::uint64_t seed,
                                       KMeansOptions opt = {}) {
  std::vector<AicPoint> out;
  out.reserve(k_values.size());
  for (int k : k_values) {
    const auto fit = fit_kmeans(points, k, seed, opt);
    out.push_back({k, fit.rss, kmeans_aic(fit.rss, points.rows(), points.cols(), k)});
  }
  return out;
}

// Kneedle-style elbow: both axes rescaled to [0, 1], pick the interior point
// farthest from the chord joining the endpoints. Ties go to the smaller k.
// Points with non-finite AIC are ignored.
inline int select_k_elbow(std::span<const AicPoint> curve) {
  std::vector<AicPoint> pts;
  for (const auto& p : curve) {
    if (std::isfinite(p.aic)) pts.push_back(p);
  }
  std::sort(pts.begin(), pts.end(), [](const AicPoint& a, const AicPoint& b) { return a.k < b.k; });
  if (pts.size() < 3) throw std::invalid_argument("elbow selection needs at least 3 finite curve points");

  const double k0 = pts.front().k, k1 = pts.back().k;
  double a_lo = pts.front().aic, a_hi = pts.front().aic;
  for (const auto& p : pts) {
    a_lo = std::min(a_lo, p.aic);
    a_hi = std::max(a_hi, p.aic);
  }
  const double a_span = a_hi > a_lo ? a_hi - a_lo : 1.0;
  auto nx = [&](const AicPoint& p) { return (p.k - k0) / (k1 - k0); };
  auto ny = [&](const AicPoint& p) { return (p.aic - a_lo) / a_span; };

  const double x0 = nx(pts.front()), y0 = ny(pts.front());
  const double dx = nx(pts.back()) - x0, dy = ny(pts.back()) - y0;
  const double len = std::hypot(dx, dy);
  int best_k = pts[1].k;
  double best_d = -1.0;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    const double d = std::abs(dx * (ny(pts[i]) - y0) - dy * (nx(pts[i]) - x0)) / len;
    if (d > best_d + 1e-12) {
      best_d = d;
      best_k = pts[i].k;
    }
  }
  return best_k;
}

}  // namespace treatrl
