#pragma once

// End-to-end fit: action grid, state space, rewards, MDP and optimal Q.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "action_space.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "mdp.hpp"
#include "reward.hpp"
#include "risk_model.hpp"
#include "rng.hpp"
#include "state_space.hpp"
#include "uncertainty.hpp"

namespace treatrl {

enum class GridMode { Reference, Fitted };

struct PipelineConfig {
  GridMode grid = GridMode::Reference;
  StateProjection projection = StateProjection::Cca;
  int k_cca = 5;
  std::optional<int> k_states;
  std::vector<int> k_candidates = StateSpaceConfig{}.k_candidates;
  double ridge = 1e-6;
  int kmeans_restarts = 1;
  double gamma = 0.99;
  double tol = 1e-9;
  int max_iter = 100000;
  RewardMode reward = RewardMode::TerminalOnly;
  double risk_holdout = 0.2;
  BoostingParams risk{};
  int replicates = 100;
  double alpha = 0.01;
  std::uint64_t seed = 1;
  int threads = 1;

  SolverConfig solver() const { return {gamma, tol, max_iter}; }

  std::uint64_t state_seed() const { return derive_seed(seed, 1); }
  std::uint64_t split_seed() const { return derive_seed(seed, 2); }
  std::uint64_t bootstrap_seed() const { return derive_seed(seed, 3); }

  void check() const {
    solver().check();
    if (k_cca < 1) throw std::invalid_argument("k_cca must be positive");
    if (k_states && *k_states < 1) throw std::invalid_argument("k_states must be positive");
    if (!k_states && k_candidates.size() < 3) throw std::invalid_argument("elbow selection needs at least 3 candidates");
    if (!(risk_holdout > 0.0 && risk_holdout < 1.0)) throw std::invalid_argument("risk_holdout must lie in (0, 1)");
    if (replicates < 2) throw std::invalid_argument("bootstrap needs at least 2 replicates");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (threads < 0) throw std::invalid_argument("threads must be nonnegative");
  }

  StateSpaceConfig state_space() const {
    StateSpaceConfig c;
    c.projection = projection;
    c.k_cca = k_cca;
    c.ridge = ridge;
    c.k_states = k_states;
    c.k_candidates = k_candidates;
    c.seed = state_seed();
    c.kmeans.n_init = kmeans_restarts;
    return c;
  }

  BootstrapConfig bootstrap() const {
    BootstrapConfig c;
    c.replicates = replicates;
    c.seed = bootstrap_seed();
    c.solver = solver();
    c.threads = threads;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = nlohmann::json{{"grid", c.grid == GridMode::Reference ? "reference" : "fit"},
                     {"projection", c.projection == StateProjection::Cca ? "cca" : "raw"},
                     {"k_cca", c.k_cca},
                     {"k_states", c.k_states ? nlohmann::json(*c.k_states) : nlohmann::json("auto")},
                     {"k_candidates", c.k_candidates},
                     {"ridge", c.ridge},
                     {"kmeans_restarts", c.kmeans_restarts},
                     {"gamma", c.gamma},
                     {"tol", c.tol},
                     {"max_iter", c.max_iter},
                     {"reward", to_string(c.reward)},
                     {"risk_holdout", c.risk_holdout},
                     {"risk_trees", c.risk.n_trees},
                     {"risk_depth", c.risk.max_depth},
                     {"risk_learning_rate", c.risk.learning_rate},
                     {"iterations", c.replicates},
                     {"alpha", c.alpha},
                     {"seed", c.seed}};
}

// Missing keys keep their current values, so a partial config file layers
// over the defaults.
inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
  auto str = [&](const char* key, auto&& apply) {
    if (j.contains(key)) apply(j.at(key).get<std::string>());
  };
  str("grid", [&](const std::string& v) {
    if (v != "reference" && v != "fit") throw std::invalid_argument("grid must be reference or fit");
    c.grid = v == "reference" ? GridMode::Reference : GridMode::Fitted;
  });
  str("projection", [&](const std::string& v) {
    if (v != "cca" && v != "raw") throw std::invalid_argument("projection must be cca or raw");
    c.projection = v == "cca" ? StateProjection::Cca : StateProjection::Standardized;
  });
  str("reward", [&](const std::string& v) {
    if (v != "terminal" && v != "intermediate") throw std::invalid_argument("reward must be terminal or intermediate");
    c.reward = v == "terminal" ? RewardMode::TerminalOnly : RewardMode::TerminalPlusIntermediate;
  });
  if (j.contains("k_states")) {
    const auto& k = j.at("k_states");
    if (k.is_string()) {
      if (k.get<std::string>() != "auto") throw std::invalid_argument("k_states must be an integer or \"auto\"");
      c.k_states.reset();
    } else {
      c.k_states = k.get<int>();
    }
  }
  auto num = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  num("k_cca", c.k_cca);
  num("k_candidates", c.k_candidates);
  num("ridge", c.ridge);
  num("kmeans_restarts", c.kmeans_restarts);
  num("gamma", c.gamma);
  num("tol", c.tol);
  num("max_iter", c.max_iter);
  num("risk_holdout", c.risk_holdout);
  num("risk_trees", c.risk.n_trees);
  num("risk_depth", c.risk.max_depth);
  num("risk_learning_rate", c.risk.learning_rate);
  num("iterations", c.replicates);
  num("alpha", c.alpha);
  num("seed", c.seed);
}

struct FittedBundle {
  PipelineConfig config;
  ActionGrid grid;
  StateSpaceFit state;
  std::shared_ptr<const RiskModel> risk;  // intermediate reward only
  std::optional<RiskMetrics> risk_metrics;
  RewardSpec reward;
  QTable q;

  int n_states() const { return state.model.n_states(); }
};

inline std::vector<std::pair<double, double>> dose_list(const Dataset& ds) {
  std::vector<std::pair<double, double>> d;
  for (const auto& ep : ds.episodes) {
    for (const auto& t : ep.transitions) d.emplace_back(t.fluid_ml, t.vis);
  }
  return d;
}

inline std::vector<std::vector<double>> episode_rewards(const Dataset& ds, const RiskModel* risk, const RewardSpec& spec) {
  std::vector<std::vector<double>> out;
  out.reserve(ds.episodes.size());
  for (const auto& ep : ds.episodes) out.push_back(compute_rewards(ep, risk, spec));
  return out;
}

inline std::vector<TaggedEpisode> tag_with_bundle(const FittedBundle& b, const Dataset& ds) {
  return tag_dataset(ds, b.state.model, b.grid, episode_rewards(ds, b.risk.get(), b.reward));
}

// Intermediate reward needs a risk model. It is trained on `risk_data` when
// given, else on a patient split of the training data, and evaluated on the
// held-out patients.
inline FittedBundle fit_pipeline(const Dataset& ds, const PipelineConfig& cfg, const Dataset* risk_data = nullptr) {
  cfg.check();
  if (ds.episodes.empty()) throw DataError("cannot fit on an empty dataset");
  FittedBundle b;
  b.config = cfg;
  b.grid = cfg.grid == GridMode::Reference ? ActionGrid::reference() : fit_action_grid(dose_list(ds));
  b.state = fit_state_space(ds, b.grid, cfg.state_space());
  b.reward.mode = cfg.reward;
  if (cfg.reward == RewardMode::TerminalPlusIntermediate) {
    const Dataset& source = risk_data ? *risk_data : ds;
    if (source.episodes.size() < 2) throw DataError("risk model needs at least 2 patients");
    auto [train, hold] = split_by_patient(source, cfg.risk_holdout, cfg.split_seed());
    auto model = std::make_shared<BoostedTreesRisk>(fit_risk_model(train, cfg.risk));
    try {
      b.risk_metrics = evaluate_risk_model(*model, hold);
    } catch (const DataError&) {
      // single-class holdout: metrics are undefined, the model is still usable
    }
    b.risk = std::move(model);
  }
  const auto tagged = tag_with_bundle(b, ds);
  const auto mdp = estimate_mdp(flatten(tagged), b.n_states(), kNumActions);
  b.q = solve_q_optimal(mdp, cfg.solver());
  return b;
}

inline nlohmann::json bundle_to_json(const FittedBundle& b) {
  nlohmann::json aic = nlohmann::json::array();
  for (const auto& p : b.state.aic) aic.push_back({{"k", p.k}, {"rss", p.rss}, {"aic", p.aic}});
  return {{"config", b.config},
          {"grid", b.grid},
          {"state_model", b.state.model},
          {"aic_curve", aic},
          {"chosen_k", b.state.chosen_k},
          {"reward", to_string(b.reward.mode)},
          {"risk_model", b.risk ? b.risk->to_json() : nlohmann::json(nullptr)},
          {"q", qtable_to_json(b.q)}};
}

inline FittedBundle bundle_from_json(const nlohmann::json& j) {
  FittedBundle b;
  j.at("config").get_to(b.config);
  j.at("grid").get_to(b.grid);
  j.at("state_model").get_to(b.state.model);
  for (const auto& p : j.at("aic_curve")) b.state.aic.push_back({p.at("k").get<int>(), p.at("rss").get<double>(), p.at("aic").get<double>()});
  b.state.chosen_k = j.at("chosen_k").get<int>();
  b.reward.mode = j.at("reward").get<std::string>() == "terminal" ? RewardMode::TerminalOnly : RewardMode::TerminalPlusIntermediate;
  if (!j.at("risk_model").is_null()) b.risk = risk_model_from_json(j.at("risk_model"));
  if (b.reward.mode == RewardMode::TerminalPlusIntermediate && !b.risk) throw DataError("bundle: intermediate reward without a risk model");
  b.q = qtable_from_json(j.at("q"));
  if (b.q.n_states != b.n_states() || b.q.n_actions != kNumActions) throw DataError("bundle: Q table does not match the state model");
  return b;
}

}  // namespace treatrl
