#pragma once

// Discrete state space: physiological features plus 12 hours of treatment
// history, projected onto canonical correlates with the clinician action,
// terminal outcome and clinical label, then clustered with k-means.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "action_space.hpp"
#include "cca.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "kmeans.hpp"

namespace treatrl {

using StateId = int;

inline constexpr int kHistoryWindows = 3;
inline constexpr int kHistoryDim = 2 * kHistoryWindows;
inline constexpr int kCcaTargetDim = 6;

// Physiological features followed by six history slots: (fluid_ml, vis) of
// the windows at step-1, step-2, step-3, zero before the episode starts.
using StateFeatures = std::vector<double>;

inline StateFeatures build_feature_vector(const Episode& episode, std::size_t step) {
  if (step >= episode.size()) throw std::out_of_range("step outside episode");
  const auto& t = episode.transitions[step];
  StateFeatures x(t.features);
  x.reserve(t.features.size() + kHistoryDim);
  for (int j = 0; j < kHistoryWindows; ++j) {
    const auto back = static_cast<std::size_t>(j + 1);
    if (step >= back) {
      const auto& prev = episode.transitions[step - back];
      x.push_back(prev.fluid_ml);
      x.push_back(prev.vis);
    } else {
      x.push_back(0.0);
      x.push_back(0.0);
    }
  }
  return x;
}

// (fluid_bin, vaso_bin, died, one-hot clinical label); the label is the one at
// the current step.
inline std::array<double, kCcaTargetDim> build_cca_targets(const Episode& episode, std::size_t step,
                                                           const ActionGrid& grid) {
  const auto& t = episode.transitions[step];
  const auto bins = grid.bins(t.fluid_ml, t.vis);
  std::array<double, kCcaTargetDim> y{};
  y[0] = bins.fluid_bin;
  y[1] = bins.vaso_bin;
  y[2] = episode.outcome() == Outcome::Death ? 1.0 : 0.0;
  y[3 + static_cast<int>(t.clinical_label)] = 1.0;
  return y;
}

inline Eigen::MatrixXd feature_matrix(const Dataset& ds) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(ds.transition_count()), static_cast<Eigen::Index>(ds.dim + kHistoryDim));
  Eigen::Index row = 0;
  for (const auto& ep : ds.episodes) {
    for (std::size_t i = 0; i < ep.size(); ++i) {
      const auto f = build_feature_vector(ep, i);
      if (static_cast<Eigen::Index>(f.size()) != x.cols()) throw DataError("feature dimension mismatch in " + ep.patient_id);
      x.row(row++) = Eigen::Map<const Eigen::RowVectorXd>(f.data(), x.cols());
    }
  }
  return x;
}

inline Eigen::MatrixXd cca_target_matrix(const Dataset& ds, const ActionGrid& grid) {
  Eigen::MatrixXd y(static_cast<Eigen::Index>(ds.transition_count()), kCcaTargetDim);
  Eigen::Index row = 0;
  for (const auto& ep : ds.episodes) {
    for (std::size_t i = 0; i < ep.size(); ++i) {
      const auto t = build_cca_targets(ep, i, grid);
      y.row(row++) = Eigen::Map<const Eigen::RowVectorXd>(t.data(), kCcaTargetDim);
    }
  }
  return y;
}

enum class StateProjection { Cca, Standardized };

struct StateModel {
  StateProjection projection = StateProjection::Cca;
  CcaModel cca;
  Eigen::MatrixXd centroids;  // n_states x output_dim

  int n_states() const { return static_cast<int>(centroids.rows()); }
  StateId discharge_state() const { return n_states(); }
  StateId death_state() const { return n_states() + 1; }
  std::size_t feature_dim() const { return static_cast<std::size_t>(cca.input_dim()); }
};

// Nearest centroid in correlate space; ties go to the lowest id. Absorbing
// ids are never produced here.
inline StateId assign_state(const StateModel& model, std::span<const double> x) {
  const Eigen::RowVectorXd z = model.cca.project(x).transpose();
  return nearest_centroid(model.centroids, z);
}

struct StateSpaceConfig {
  StateProjection projection = StateProjection::Cca;
  int k_cca = 5;
  double ridge = 1e-6;
  std::optional<int> k_states;  // fixed; otherwise chosen by the AIC elbow
  std::vector<int> k_candidates = {5, 10, 15, 20, 25, 30, 40, 50, 60, 80, 100};
  std::uint64_t seed = 1;
  KMeansOptions kmeans{};
};

struct StateSpaceFit {
  StateModel model;
  std::vector<AicPoint> aic;  // empty when k was fixed
  int chosen_k = 0;
};

inline StateSpaceFit fit_state_space(const Dataset& ds, const ActionGrid& grid, const StateSpaceConfig& cfg) {
  const Eigen::MatrixXd x = feature_matrix(ds);
  StateSpaceFit fit;
  fit.model.projection = cfg.projection;
  if (cfg.projection == StateProjection::Cca) {
    fit.model.cca = fit_cca(x, cca_target_matrix(ds, grid), cfg.k_cca, cfg.ridge);
  } else {
    fit.model.cca = CcaModel::standardize_only(Standardizer::fit(x));
  }
  const Eigen::MatrixXd z = fit.model.cca.project_rows(x);

  int k = 0;
  if (cfg.k_states) {
    k = *cfg.k_states;
  } else {
    std::vector<int> ks;
    for (int c : cfg.k_candidates) {
      if (c >= 1 && c <= z.rows()) ks.push_back(c);
    }
    fit.aic = aic_curve(z, ks, cfg.seed, cfg.kmeans);
    k = select_k_elbow(fit.aic);
  }
  fit.chosen_k = k;
  fit.model.centroids = fit_kmeans(z, k, cfg.seed, cfg.kmeans).centroids;
  return fit;
}

inline void to_json(nlohmann::json& j, const StateModel& m) {
  j = nlohmann::json{{"projection", m.projection == StateProjection::Cca ? "cca" : "standardized"},
                     {"cca", m.cca},
                     {"centroids", detail::matrix_to_json(m.centroids)},
                     {"n_states", m.n_states()}};
}

inline void from_json(const nlohmann::json& j, StateModel& m) {
  m.projection = j.at("projection").get<std::string>() == "cca" ? StateProjection::Cca : StateProjection::Standardized;
  j.at("cca").get_to(m.cca);
  m.centroids = detail::matrix_from_json(j.at("centroids"));
  if (m.centroids.cols() != m.cca.output_dim()) throw DataError("state model JSON: centroid width mismatch");
  if (j.at("n_states").get<int>() != m.n_states()) throw DataError("state model JSON: n_states mismatch");
}

}  // namespace treatrl
