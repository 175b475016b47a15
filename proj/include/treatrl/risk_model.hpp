#pragma once

// Mortality-risk index: a binary classifier over StateFeatures returning
// P(death). The reference implementation is gradient boosting of shallow
// regression trees on the logistic loss with Newton leaf values and
// quantile-binned split candidates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace treatrl {

class RiskModel {
 public:
  virtual ~RiskModel() = default;
  virtual double score(std::span<const double> x) const = 0;
  virtual std::size_t input_dim() const = 0;
  virtual std::string kind() const = 0;
  virtual nlohmann::json to_json() const = 0;
  // Per-feature importance if the model kind supports it.
  virtual std::vector<double> feature_importances() const { return {}; }
};

struct BoostingParams {
  int n_trees = 100;
  int max_depth = 3;
  double learning_rate = 0.1;
  double l2 = 1.0;
  double min_child_hessian = 1.0;
  int max_bins = 32;
};

class BoostedTreesRisk final : public RiskModel {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // x[feature] <= threshold goes left
    int left = -1;
    int right = -1;
    double value = 0.0;
  };
  using Tree = std::vector<Node>;

  static BoostedTreesRisk fit(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                              const BoostingParams& params = {});

  double margin(std::span<const double> x) const {
    if (x.size() != dim_) {
      throw DataError("risk model dimension mismatch: expected " + std::to_string(dim_) + ", got " +
                      std::to_string(x.size()));
    }
    double m = base_margin_;
    for (const auto& tree : trees_) m += eval_tree(tree, x);
    return m;
  }

  double score(std::span<const double> x) const override { return 1.0 / (1.0 + std::exp(-margin(x))); }
  std::size_t input_dim() const override { return dim_; }
  std::string kind() const override { return "boosted_trees"; }
  std::vector<double> feature_importances() const override { return importance_; }

  nlohmann::json to_json() const override {
    nlohmann::json trees = nlohmann::json::array();
    for (const auto& t : trees_) {
      nlohmann::json nodes = nlohmann::json::array();
      for (const auto& n : t) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
      trees.push_back(std::move(nodes));
    }
    return {{"kind", kind()}, {"dim", dim_}, {"base_margin", base_margin_}, {"importance", importance_}, {"trees", trees}};
  }

  static BoostedTreesRisk from_json(const nlohmann::json& j) {
    if (j.at("kind").get<std::string>() != "boosted_trees") throw DataError("risk model JSON: unknown kind");
    BoostedTreesRisk m;
    m.dim_ = j.at("dim").get<std::size_t>();
    m.base_margin_ = j.at("base_margin").get<double>();
    m.importance_ = j.at("importance").get<std::vector<double>>();
    for (const auto& t : j.at("trees")) {
      Tree tree;
      for (const auto& n : t) {
        tree.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                        n.at(4).get<double>()});
      }
      m.trees_.push_back(std::move(tree));
    }
    return m;
  }

  std::size_t tree_count() const { return trees_.size(); }

 private:
  static double eval_tree(const Tree& t, std::span<const double> x) {
    int i = 0;
    while (t[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& n = t[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return t[static_cast<std::size_t>(i)].value;
  }

  std::size_t dim_ = 0;
  double base_margin_ = 0.0;
  std::vector<Tree> trees_;
  std::vector<double> importance_;
};

namespace detail {

struct BinnedFeatures {
  std::vector<std::vector<double>> cuts;  // per feature, ascending upper bounds of bins 0..B-2
  std::vector<std::vector<std::uint8_t>> bins;  // per feature, per row
};

inline BinnedFeatures bin_features(const std::vector<std::vector<double>>& x, std::size_t dim, int max_bins) {
  BinnedFeatures b;
  b.cuts.resize(dim);
  b.bins.assign(dim, std::vector<std::uint8_t>(x.size(), 0));
  std::vector<double> col(x.size());
  for (std::size_t f = 0; f < dim; ++f) {
    for (std::size_t i = 0; i < x.size(); ++i) col[i] = x[i][f];
    std::vector<double> sorted = col;
    std::sort(sorted.begin(), sorted.end());
    auto& cuts = b.cuts[f];
    for (int q = 1; q < max_bins; ++q) {
      const auto idx = static_cast<std::size_t>(static_cast<double>(q) / max_bins * static_cast<double>(sorted.size()));
      const double c = sorted[std::min(idx, sorted.size() - 1)];
      if (c < sorted.back() && (cuts.empty() || c > cuts.back())) cuts.push_back(c);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      b.bins[f][i] = static_cast<std::uint8_t>(std::lower_bound(cuts.begin(), cuts.end(), col[i]) - cuts.begin());
    }
  }
  return b;
}

}  // namespace detail

inline BoostedTreesRisk BoostedTreesRisk::fit(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                              const BoostingParams& params) {
  if (x.empty() || x.size() != y.size()) throw DataError("risk model: empty or misaligned training data");
  const std::size_t n = x.size(), dim = x.front().size();
  const auto positives = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
  if (positives == 0 || positives == n) throw DataError("risk model needs both outcome classes in training data");
  if (params.max_bins < 2 || params.max_bins > 256) throw std::invalid_argument("max_bins must lie in [2, 256]");

  BoostedTreesRisk model;
  model.dim_ = dim;
  model.importance_.assign(dim, 0.0);
  const double prior = static_cast<double>(positives) / static_cast<double>(n);
  model.base_margin_ = std::log(prior / (1.0 - prior));

  const auto binned = detail::bin_features(x, dim, params.max_bins);
  std::vector<double> margin(n, model.base_margin_), grad(n), hess(n);
  std::vector<int> node_of(n);

  struct Split {
    double gain = 0.0;
    int feature = -1;
    int bin = -1;
  };

  for (int t = 0; t < params.n_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-margin[i]));
      grad[i] = p - y[i];
      hess[i] = std::max(p * (1.0 - p), 1e-16);
    }
    Tree tree(1);
    std::fill(node_of.begin(), node_of.end(), 0);
    std::vector<int> frontier{0};

    for (int depth = 0; depth < params.max_depth && !frontier.empty(); ++depth) {
      std::vector<int> next;
      for (int node : frontier) {
        double g_tot = 0.0, h_tot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (node_of[i] == node) {
            g_tot += grad[i];
            h_tot += hess[i];
          }
        }
        const double parent = g_tot * g_tot / (h_tot + params.l2);
        Split best;
        std::vector<double> gh(static_cast<std::size_t>(params.max_bins) * 2);
        for (std::size_t f = 0; f < dim; ++f) {
          const auto nbins = binned.cuts[f].size() + 1;
          if (nbins < 2) continue;
          std::fill(gh.begin(), gh.end(), 0.0);
          const auto& fb = binned.bins[f];
          for (std::size_t i = 0; i < n; ++i) {
            if (node_of[i] != node) continue;
            gh[2 * fb[i]] += grad[i];
            gh[2 * fb[i] + 1] += hess[i];
          }
          double gl = 0.0, hl = 0.0;
          for (std::size_t b = 0; b + 1 < nbins; ++b) {
            gl += gh[2 * b];
            hl += gh[2 * b + 1];
            const double gr = g_tot - gl, hr = h_tot - hl;
            if (hl < params.min_child_hessian || hr < params.min_child_hessian) continue;
            const double gain = gl * gl / (hl + params.l2) + gr * gr / (hr + params.l2) - parent;
            if (gain > best.gain + 1e-12) best = {gain, static_cast<int>(f), static_cast<int>(b)};
          }
        }
        if (best.feature < 0) continue;
        const auto f = static_cast<std::size_t>(best.feature);
        model.importance_[f] += best.gain;
        const int left = static_cast<int>(tree.size());
        tree.push_back({});
        tree.push_back({});
        auto& nd = tree[static_cast<std::size_t>(node)];
        nd.feature = best.feature;
        nd.threshold = binned.cuts[f][static_cast<std::size_t>(best.bin)];
        nd.left = left;
        nd.right = left + 1;
        for (std::size_t i = 0; i < n; ++i) {
          if (node_of[i] == node) node_of[i] = binned.bins[f][i] <= best.bin ? left : left + 1;
        }
        next.push_back(left);
        next.push_back(left + 1);
      }
      frontier = std::move(next);
    }

    // Newton leaf values.
    std::vector<double> gs(tree.size(), 0.0), hs(tree.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      gs[static_cast<std::size_t>(node_of[i])] += grad[i];
      hs[static_cast<std::size_t>(node_of[i])] += hess[i];
    }
    for (std::size_t k = 0; k < tree.size(); ++k) {
      if (tree[k].feature < 0) tree[k].value = -params.learning_rate * gs[k] / (hs[k] + params.l2);
    }
    for (std::size_t i = 0; i < n; ++i) margin[i] += tree[static_cast<std::size_t>(node_of[i])].value;
    model.trees_.push_back(std::move(tree));
  }
  return model;
}

inline std::unique_ptr<RiskModel> risk_model_from_json(const nlohmann::json& j) {
  return std::make_unique<BoostedTreesRisk>(BoostedTreesRisk::from_json(j));
}

}  // namespace treatrl
