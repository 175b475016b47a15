#pragma once

// Canonical correlation analysis by SVD of the whitened cross-covariance.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "error.hpp"

namespace treatrl {

struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // sample std, floored at 1e-12

  static Standardizer fit(const Eigen::MatrixXd& x) {
    if (x.rows() < 2) throw DataError("standardization needs at least 2 rows");
    Standardizer s;
    s.mean = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - s.mean.transpose();
    s.scale = (centered.colwise().squaredNorm() / static_cast<double>(x.rows() - 1)).cwiseSqrt().transpose();
    s.scale = s.scale.cwiseMax(1e-12);
    return s;
  }

  Eigen::Index dim() const { return mean.size(); }

  Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
    return (x.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const { return (x - mean).cwiseQuotient(scale); }
};

// Maps raw feature vectors to canonical correlates: standardize, then
// multiply by `weights` (p x k). A model built by standardize_only() uses the
// identity as weights and carries no correlations.
struct CcaModel {
  Standardizer scale;
  Eigen::MatrixXd weights;
  Eigen::VectorXd correlations;

  static CcaModel standardize_only(Standardizer s) {
    CcaModel m;
    const auto p = s.dim();
    m.scale = std::move(s);
    m.weights = Eigen::MatrixXd::Identity(p, p);
    return m;
  }

  Eigen::Index input_dim() const { return scale.dim(); }
  Eigen::Index output_dim() const { return weights.cols(); }

  Eigen::VectorXd project(const Eigen::VectorXd& x) const {
    if (x.size() != input_dim()) {
      throw DataError("projection dimension mismatch: expected " + std::to_string(input_dim()) + ", got " +
                      std::to_string(x.size()));
    }
    return weights.transpose() * scale.apply(x);
  }

  Eigen::VectorXd project(std::span<const double> x) const {
    return project(Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()))));
  }

  Eigen::MatrixXd project_rows(const Eigen::MatrixXd& x) const {
    if (x.cols() != input_dim()) throw DataError("projection dimension mismatch");
    return scale.apply(x) * weights;
  }
};

namespace detail {

inline Eigen::MatrixXd covariance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.transpose() * b / static_cast<double>(a.rows() - 1);
}

inline void require_full_rank(const Eigen::MatrixXd& s, const char* which) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 1e-12 * std::max(hi, 1.0))) {
    throw NumericError(std::string("rank-deficient ") + which + " covariance; use ridge > 0");
  }
}

}  // namespace detail

// Fits the top-k X-side canonical directions. X is standardized internally;
// Y is centered and scaled (which leaves canonical correlations unchanged).
// `ridge` is added to the diagonal of both covariance blocks.
inline CcaModel fit_cca(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, int k_cca, double ridge) {
  const Eigen::Index n = x.rows(), p = x.cols(), q = y.cols();
  if (y.rows() != n) throw DataError("CCA: X and Y row counts differ");
  if (n <= p + q) {
    throw DataError("CCA: need more than " + std::to_string(p + q) + " rows, got " + std::to_string(n));
  }
  if (k_cca < 1 || k_cca > std::min(p, q)) {
    throw std::invalid_argument("k_cca must lie in [1, min(dim X, dim Y)]");
  }
  if (ridge < 0.0) throw std::invalid_argument("ridge must be nonnegative");

  CcaModel model;
  model.scale = Standardizer::fit(x);
  const Eigen::MatrixXd xs = model.scale.apply(x);
  const Eigen::MatrixXd ys = Standardizer::fit(y).apply(y);

  Eigen::MatrixXd sxx = detail::covariance(xs, xs);
  Eigen::MatrixXd syy = detail::covariance(ys, ys);
  const Eigen::MatrixXd sxy = detail::covariance(xs, ys);
  sxx.diagonal().array() += ridge;
  syy.diagonal().array() += ridge;
  if (ridge == 0.0) {
    detail::require_full_rank(sxx, "X");
    detail::require_full_rank(syy, "Y");
  }

  Eigen::LLT<Eigen::MatrixXd> lx(sxx), ly(syy);
  if (lx.info() != Eigen::Success || ly.info() != Eigen::Success) {
    throw NumericError("CCA: covariance block is not positive definite");
  }
  const Eigen::MatrixXd lxm = lx.matrixL();
  const Eigen::MatrixXd lym = ly.matrixL();
  // K = Lx^{-1} Sxy Ly^{-T}
  const Eigen::MatrixXd left = lxm.triangularView<Eigen::Lower>().solve(sxy);
  const Eigen::MatrixXd k = lym.triangularView<Eigen::Lower>().solve(left.transpose()).transpose();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(k, Eigen::ComputeThinU);
  const Eigen::MatrixXd u = svd.matrixU().leftCols(k_cca);
  model.correlations = svd.singularValues().head(k_cca).cwiseMin(1.0).cwiseMax(0.0);
  model.weights = lxm.transpose().triangularView<Eigen::Upper>().solve(u);

  // Sign convention: the largest-magnitude weight of each direction is positive.
  for (Eigen::Index c = 0; c < model.weights.cols(); ++c) {
    Eigen::Index at = 0;
    model.weights.col(c).cwiseAbs().maxCoeff(&at);
    if (model.weights(at, c) < 0.0) model.weights.col(c) *= -1.0;
  }
  return model;
}

namespace detail {

inline nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw DataError("matrix JSON: data size mismatch");
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  }
  return m;
}

inline nlohmann::json vector_to_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const CcaModel& m) {
  j = nlohmann::json{{"mean", detail::vector_to_json(m.scale.mean)},
                     {"std", detail::vector_to_json(m.scale.scale)},
                     {"projection", detail::matrix_to_json(m.weights)},
                     {"correlations", detail::vector_to_json(m.correlations)}};
}

inline void from_json(const nlohmann::json& j, CcaModel& m) {
  m.scale.mean = detail::vector_from_json(j.at("mean"));
  m.scale.scale = detail::vector_from_json(j.at("std"));
  m.weights = detail::matrix_from_json(j.at("projection"));
  m.correlations = detail::vector_from_json(j.at("correlations"));
  if (m.weights.rows() != m.scale.dim()) throw DataError("CCA JSON: projection rows != feature dimension");
}

}  // namespace treatrl
