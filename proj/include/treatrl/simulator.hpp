#pragma once

// Ground-truth cohort generator. Latent states are response phenotype
// (healthy, sick) x severity (0, 1, 2); severity moves one level per window,
// improving past 0 means discharge and worsening past 2 means death. The sick
// phenotype only recovers under high doses while high doses harm the healthy
// one. The logging policy doses by phenotype and severity, so hiding the
// phenotype dimensions confounds dose with outcome.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "action_space.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace treatrl {

inline constexpr int kPhenotypes = 2;
inline constexpr int kSeverities = 3;
inline constexpr int kLatentStates = kPhenotypes * kSeverities;
inline constexpr int kDoseLevels = 4;
inline constexpr int kLatentDischarge = kLatentStates;
inline constexpr int kLatentDeath = kLatentStates + 1;

using Triple = std::array<double, 3>;

// Every constant of the default scenario. config/default_scenario.json holds
// the same values.
struct ScenarioConstants {
  // (improve, stay, worsen) per phenotype and dose level
  std::array<std::array<Triple, kDoseLevels>, kPhenotypes> moves{{
      {{{0.60, 0.30, 0.10}, {0.45, 0.35, 0.20}, {0.30, 0.35, 0.35}, {0.15, 0.35, 0.50}}},
      {{{0.10, 0.30, 0.60}, {0.20, 0.30, 0.50}, {0.30, 0.30, 0.40}, {0.50, 0.25, 0.25}}},
  }};
  // preferred dose level of the logging policy per phenotype and severity
  std::array<std::array<int, kSeverities>, kPhenotypes> behavior_target{{{0, 1, 2}, {2, 3, 3}}};
  double behavior_sharpness = 1.2;  // multiplied by the confound strength
  double p_sick = 0.5;
  std::array<Triple, kPhenotypes> start_severity{{{0.7, 0.3, 0.0}, {0.0, 0.3, 0.7}}};  // per phenotype
  // (non_sepsis, sepsis, septic_shock) per phenotype and severity
  std::array<std::array<Triple, kSeverities>, kPhenotypes> label_probs{{
      {{{0.80, 0.20, 0.00}, {0.40, 0.50, 0.10}, {0.10, 0.60, 0.30}}},
      {{{0.30, 0.60, 0.10}, {0.05, 0.55, 0.40}, {0.00, 0.20, 0.80}}},
  }};
  std::array<ActionBins, kDoseLevels> dose_bins{{{1, 1}, {3, 1}, {4, 3}, {5, 5}}};
  // Emission means. Severity dim k carries channel k % 2 of the severity's
  // row; phenotype dim k carries channel k % 3 of the sick row (healthy
  // patients sit at zero). The six latent means are affinely independent
  // when phenotype dims are emitted.
  std::array<std::array<double, 2>, kSeverities> severity_profile{{{0.0, 0.0}, {1.0, 1.0}, {2.0, 0.0}}};
  std::array<Triple, kSeverities> phenotype_profile{{{1.0, 0.0, 0.0}, {1.0, 1.0, 0.0}, {1.0, 0.0, 1.0}}};
  int severity_dims = 12;
  int phenotype_dims = 24;
  int noise_dims = 8;
  double emission_sigma = 0.5;
  // patient-level baseline groups unrelated to dynamics or outcome
  int nuisance_groups = 16;
  int nuisance_dims = 16;
  double nuisance_spread = 3.0;
  double discharge_reward = 1.0;
  double death_reward = -1.0;

  void check() const {
    auto simplex = [](const Triple& t, const char* what) {
      double s = 0.0;
      for (double v : t) {
        if (v < 0.0) throw std::invalid_argument(std::string(what) + " has a negative probability");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-12) throw std::invalid_argument(std::string(what) + " does not sum to 1");
    };
    for (const auto& ph : moves) for (const auto& t : ph) simplex(t, "move row");
    for (const auto& ph : label_probs) for (const auto& t : ph) simplex(t, "label row");
    for (const auto& t : start_severity) simplex(t, "start severity");
    for (const auto& ph : behavior_target) {
      for (int t : ph) {
        if (t < 0 || t >= kDoseLevels) throw std::invalid_argument("behavior target outside dose levels");
      }
    }
    if (!(p_sick >= 0.0 && p_sick <= 1.0)) throw std::invalid_argument("p_sick outside [0, 1]");
    if (severity_dims < 1 || phenotype_dims < 1 || noise_dims < 0) throw std::invalid_argument("bad emission dims");
    if (!(emission_sigma > 0.0)) throw std::invalid_argument("emission_sigma must be positive");
    if (nuisance_groups < 1 || nuisance_dims < 0 || nuisance_spread < 0.0) throw std::invalid_argument("bad nuisance settings");
    for (std::size_t i = 0; i < dose_bins.size(); ++i) {
      encode_action(dose_bins[i].fluid_bin, dose_bins[i].vaso_bin);
      if (i > 0 && (dose_bins[i].fluid_bin < dose_bins[i - 1].fluid_bin ||
                    dose_bins[i].vaso_bin < dose_bins[i - 1].vaso_bin ||
                    encode_action(dose_bins[i].fluid_bin, dose_bins[i].vaso_bin) ==
                        encode_action(dose_bins[i - 1].fluid_bin, dose_bins[i - 1].vaso_bin))) {
        throw std::invalid_argument("dose levels must be distinct and ordered in both margins");
      }
    }
  }
};

inline void to_json(nlohmann::json& j, const ScenarioConstants& c) {
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : c.dose_bins) bins.push_back({b.fluid_bin, b.vaso_bin});
  j = nlohmann::json{{"moves", c.moves},
                     {"behavior_target", c.behavior_target},
                     {"behavior_sharpness", c.behavior_sharpness},
                     {"p_sick", c.p_sick},
                     {"start_severity", c.start_severity},
                     {"label_probs", c.label_probs},
                     {"dose_bins", bins},
                     {"severity_profile", c.severity_profile},
                     {"phenotype_profile", c.phenotype_profile},
                     {"severity_dims", c.severity_dims},
                     {"phenotype_dims", c.phenotype_dims},
                     {"noise_dims", c.noise_dims},
                     {"emission_sigma", c.emission_sigma},
                     {"nuisance_groups", c.nuisance_groups},
                     {"nuisance_dims", c.nuisance_dims},
                     {"nuisance_spread", c.nuisance_spread},
                     {"discharge_reward", c.discharge_reward},
                     {"death_reward", c.death_reward}};
}

inline void from_json(const nlohmann::json& j, ScenarioConstants& c) {
  j.at("moves").get_to(c.moves);
  j.at("behavior_target").get_to(c.behavior_target);
  j.at("behavior_sharpness").get_to(c.behavior_sharpness);
  j.at("p_sick").get_to(c.p_sick);
  j.at("start_severity").get_to(c.start_severity);
  j.at("label_probs").get_to(c.label_probs);
  const auto& bins = j.at("dose_bins");
  if (bins.size() != kDoseLevels) throw DataError("scenario: dose_bins needs 4 entries");
  for (std::size_t i = 0; i < kDoseLevels; ++i) c.dose_bins[i] = {bins[i].at(0).get<int>(), bins[i].at(1).get<int>()};
  j.at("severity_profile").get_to(c.severity_profile);
  j.at("phenotype_profile").get_to(c.phenotype_profile);
  j.at("severity_dims").get_to(c.severity_dims);
  j.at("phenotype_dims").get_to(c.phenotype_dims);
  j.at("noise_dims").get_to(c.noise_dims);
  j.at("emission_sigma").get_to(c.emission_sigma);
  j.at("nuisance_groups").get_to(c.nuisance_groups);
  j.at("nuisance_dims").get_to(c.nuisance_dims);
  j.at("nuisance_spread").get_to(c.nuisance_spread);
  j.at("discharge_reward").get_to(c.discharge_reward);
  j.at("death_reward").get_to(c.death_reward);
}

inline ScenarioConstants load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scenario file " + path);
  ScenarioConstants c = nlohmann::json::parse(in).get<ScenarioConstants>();
  c.check();
  return c;
}

struct SimConfig {
  int n_patients = 2000;
  int max_steps = 40;
  double confound = 1.0;
  bool observable = false;
  std::uint64_t seed = 1;

  void check() const {
    if (n_patients < 1) throw std::invalid_argument("n_patients must be at least 1");
    if (max_steps < 1) throw std::invalid_argument("max_steps must be at least 1");
    if (!(confound >= 0.0 && confound <= 1.0)) throw std::invalid_argument("confound must lie in [0, 1]");
  }
};

inline int latent_id(int phenotype, int severity) { return phenotype * kSeverities + severity; }
inline int latent_phenotype(int l) { return l / kSeverities; }
inline int latent_severity(int l) { return l % kSeverities; }

struct GroundTruthMdp {
  ScenarioConstants constants;
  double confound = 1.0;
  bool observable = false;
  // Baseline group centres: coordinate j of group g is +spread when bit
  // (j mod b) of g is set, b being the bit width of the group count.
  double nuisance_center(int group, int dim) const {
    const int bits = std::max(1, static_cast<int>(std::ceil(std::log2(std::max(2, constants.nuisance_groups)))));
    return ((group >> (dim % bits)) & 1) ? constants.nuisance_spread : -constants.nuisance_spread;
  }

  // kernel[l][dose][l'] over l' in [0, kLatentStates + 2)
  std::array<std::array<std::array<double, kLatentStates + 2>, kDoseLevels>, kLatentStates> kernel{};
  std::array<std::array<double, kDoseLevels>, kLatentStates> behavior{};
  std::array<double, kLatentStates> start{};

  double reward(int l_next) const {
    if (l_next == kLatentDischarge) return constants.discharge_reward;
    if (l_next == kLatentDeath) return constants.death_reward;
    return 0.0;
  }

  int feature_dim() const {
    return constants.severity_dims + (observable ? constants.phenotype_dims : 0) + constants.noise_dims +
           constants.nuisance_dims;
  }

  ActionId action_of(int dose) const {
    const auto& b = constants.dose_bins[static_cast<std::size_t>(dose)];
    return encode_action(b.fluid_bin, b.vaso_bin);
  }

  std::optional<int> dose_of(ActionId a) const {
    for (int d = 0; d < kDoseLevels; ++d) {
      if (action_of(d) == a) return d;
    }
    return std::nullopt;
  }
};

inline GroundTruthMdp build_ground_truth(const SimConfig& cfg, const ScenarioConstants& constants = {}) {
  cfg.check();
  constants.check();
  GroundTruthMdp gt;
  gt.constants = constants;
  gt.confound = cfg.confound;
  gt.observable = cfg.observable;
  for (int l = 0; l < kLatentStates; ++l) {
    const int ph = latent_phenotype(l), sev = latent_severity(l);
    for (int d = 0; d < kDoseLevels; ++d) {
      const auto& m = constants.moves[static_cast<std::size_t>(ph)][static_cast<std::size_t>(d)];
      auto& row = gt.kernel[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)];
      row.fill(0.0);
      row[static_cast<std::size_t>(sev == 0 ? kLatentDischarge : latent_id(ph, sev - 1))] += m[0];
      row[static_cast<std::size_t>(l)] += m[1];
      row[static_cast<std::size_t>(sev == kSeverities - 1 ? kLatentDeath : latent_id(ph, sev + 1))] += m[2];
    }
    const int target = constants.behavior_target[static_cast<std::size_t>(ph)][static_cast<std::size_t>(sev)];
    double z = 0.0;
    auto& beta = gt.behavior[static_cast<std::size_t>(l)];
    for (int d = 0; d < kDoseLevels; ++d) {
      beta[static_cast<std::size_t>(d)] = std::exp(-cfg.confound * constants.behavior_sharpness * std::abs(d - target));
      z += beta[static_cast<std::size_t>(d)];
    }
    for (auto& b : beta) b /= z;
    gt.start[static_cast<std::size_t>(l)] =
        (ph == 1 ? constants.p_sick : 1.0 - constants.p_sick) * constants.start_severity[static_cast<std::size_t>(ph)][static_cast<std::size_t>(sev)];
  }
  return gt;
}

struct TruthRow {
  std::string patient_id;
  int step_index = 0;
  int latent_state = 0;
};

struct SimulatedCohort {
  Dataset data;
  std::vector<TruthRow> truth;  // one per emitted transition, dataset order
};

namespace detail {

template <std::size_t N>
int sample_index(const std::array<double, N>& p, Rng& rng) {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  for (std::size_t i = 0; i < N; ++i) {
    u -= p[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  for (std::size_t i = N; i-- > 0;) {
    if (p[i] > 0.0) return static_cast<int>(i);
  }
  return 0;
}

inline std::string patient_name(int i, int n) {
  const int width = std::max(5, static_cast<int>(std::to_string(std::max(n - 1, 0)).size()));
  std::string s = std::to_string(i);
  return "p" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

}  // namespace detail

// Episodes longer than max_steps are truncated in the log but the latent
// chain keeps running under the logging policy, so the last logged window
// still carries the true outcome.
inline SimulatedCohort simulate_cohort(const GroundTruthMdp& gt, const SimConfig& cfg) {
  cfg.check();
  const auto& c = gt.constants;
  const ActionGrid grid = ActionGrid::reference();
  std::array<std::pair<double, double>, kDoseLevels> doses;
  for (int d = 0; d < kDoseLevels; ++d) doses[static_cast<std::size_t>(d)] = grid.representative_dose(c.dose_bins[static_cast<std::size_t>(d)]);

  std::vector<Episode> episodes;
  std::vector<std::vector<TruthRow>> truth(static_cast<std::size_t>(cfg.n_patients));
  episodes.reserve(static_cast<std::size_t>(cfg.n_patients));
  for (int i = 0; i < cfg.n_patients; ++i) {
    Rng rng = make_rng(cfg.seed, static_cast<std::uint64_t>(i));
    std::normal_distribution<double> noise(0.0, 1.0);
    Episode ep;
    ep.patient_id = detail::patient_name(i, cfg.n_patients);
    int l = detail::sample_index(gt.start, rng);
    const int group = std::uniform_int_distribution<int>(0, c.nuisance_groups - 1)(rng);
    for (int step = 0;; ++step) {
      const int dose = detail::sample_index(gt.behavior[static_cast<std::size_t>(l)], rng);
      const int next = detail::sample_index(gt.kernel[static_cast<std::size_t>(l)][static_cast<std::size_t>(dose)], rng);
      if (step < cfg.max_steps) {
        const int ph = latent_phenotype(l), sev = latent_severity(l);
        Transition t;
        t.patient_id = ep.patient_id;
        t.step_index = step;
        const auto& sp = c.severity_profile[static_cast<std::size_t>(sev)];
        for (int k = 0; k < c.severity_dims; ++k) t.features.push_back(sp[static_cast<std::size_t>(k % 2)] + c.emission_sigma * noise(rng));
        if (gt.observable) {
          const auto& pp = c.phenotype_profile[static_cast<std::size_t>(sev)];
          for (int k = 0; k < c.phenotype_dims; ++k) {
            t.features.push_back(ph * pp[static_cast<std::size_t>(k % 3)] + c.emission_sigma * noise(rng));
          }
        }
        for (int k = 0; k < c.noise_dims; ++k) t.features.push_back(noise(rng));
        for (int k = 0; k < c.nuisance_dims; ++k) t.features.push_back(gt.nuisance_center(group, k) + noise(rng));
        t.fluid_ml = doses[static_cast<std::size_t>(dose)].first;
        t.vis = doses[static_cast<std::size_t>(dose)].second;
        t.clinical_label = static_cast<ClinicalLabel>(
            detail::sample_index(c.label_probs[static_cast<std::size_t>(ph)][static_cast<std::size_t>(sev)], rng));
        ep.transitions.push_back(std::move(t));
        truth[static_cast<std::size_t>(i)].push_back({ep.patient_id, step, l});
      }
      if (next >= kLatentStates) {
        ep.transitions.back().terminal = next == kLatentDischarge ? Terminal::Discharge : Terminal::Death;
        break;
      }
      l = next;
    }
    episodes.push_back(std::move(ep));
  }
  SimulatedCohort out;
  out.data = Dataset::from_episodes(std::move(episodes), static_cast<std::size_t>(gt.feature_dim()));
  for (auto& rows : truth) out.truth.insert(out.truth.end(), rows.begin(), rows.end());
  return out;
}

inline void write_truth(std::ostream& out, const std::vector<TruthRow>& truth) {
  out << "patient_id,step_index,latent_state\n";
  for (const auto& r : truth) out << r.patient_id << ',' << r.step_index << ',' << r.latent_state << '\n';
}

struct OracleSolution {
  std::array<std::array<double, kDoseLevels>, kLatentStates> q{};
  std::array<int, kLatentStates> optimal_dose{};  // lowest dose on exact ties
  std::array<double, kLatentStates> optimal_value{};
  std::array<double, kLatentStates> behavior_value{};
  std::array<double, kLatentStates> optimal_death_prob{};
  std::array<double, kLatentStates> behavior_death_prob{};
  double start_optimal_value = 0.0;
  double start_behavior_value = 0.0;
  int iterations = 0;
};

namespace detail {

// Solves (I - gamma P_pi) v = r_pi and (I - P_pi) h = P_pi(death) for a
// stochastic latent policy.
inline void solve_latent_policy(const GroundTruthMdp& gt, const std::array<std::array<double, kDoseLevels>, kLatentStates>& pi,
                                double gamma, std::array<double, kLatentStates>& value,
                                std::array<double, kLatentStates>& death) {
  Eigen::MatrixXd p = Eigen::MatrixXd::Zero(kLatentStates, kLatentStates);
  Eigen::VectorXd r = Eigen::VectorXd::Zero(kLatentStates), pd = Eigen::VectorXd::Zero(kLatentStates);
  for (int l = 0; l < kLatentStates; ++l) {
    for (int d = 0; d < kDoseLevels; ++d) {
      const double w = pi[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)];
      const auto& row = gt.kernel[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)];
      for (int n = 0; n < kLatentStates + 2; ++n) {
        r(l) += w * row[static_cast<std::size_t>(n)] * gt.reward(n);
        if (n < kLatentStates) p(l, n) += w * row[static_cast<std::size_t>(n)];
      }
      pd(l) += w * row[kLatentDeath];
    }
  }
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(kLatentStates, kLatentStates);
  const Eigen::VectorXd v = (eye - gamma * p).fullPivLu().solve(r);
  const Eigen::VectorXd h = (eye - p).fullPivLu().solve(pd);
  for (int l = 0; l < kLatentStates; ++l) {
    value[static_cast<std::size_t>(l)] = v(l);
    death[static_cast<std::size_t>(l)] = h(l);
  }
}

}  // namespace detail

inline OracleSolution oracle_solution(const GroundTruthMdp& gt, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  OracleSolution o;
  std::array<double, kLatentStates> v{};
  for (int it = 1;; ++it) {
    double res = 0.0;
    std::array<double, kLatentStates> nv{};
    for (int l = 0; l < kLatentStates; ++l) {
      double best = -std::numeric_limits<double>::infinity();
      for (int d = 0; d < kDoseLevels; ++d) {
        double acc = 0.0;
        const auto& row = gt.kernel[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)];
        for (int n = 0; n < kLatentStates + 2; ++n) {
          acc += row[static_cast<std::size_t>(n)] * (gt.reward(n) + (n < kLatentStates ? gamma * v[static_cast<std::size_t>(n)] : 0.0));
        }
        res = std::max(res, std::abs(acc - o.q[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)]));
        o.q[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)] = acc;
        best = std::max(best, acc);
      }
      nv[static_cast<std::size_t>(l)] = best;
    }
    v = nv;
    o.iterations = it;
    if (res < 1e-14) break;
    if (it > 10000000) throw NumericError("oracle value iteration did not converge");
  }
  std::array<std::array<double, kDoseLevels>, kLatentStates> greedy{};
  for (int l = 0; l < kLatentStates; ++l) {
    int best = 0;
    for (int d = 1; d < kDoseLevels; ++d) {
      if (o.q[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)] > o.q[static_cast<std::size_t>(l)][static_cast<std::size_t>(best)]) best = d;
    }
    o.optimal_dose[static_cast<std::size_t>(l)] = best;
    greedy[static_cast<std::size_t>(l)][static_cast<std::size_t>(best)] = 1.0;
  }
  detail::solve_latent_policy(gt, greedy, gamma, o.optimal_value, o.optimal_death_prob);
  detail::solve_latent_policy(gt, gt.behavior, gamma, o.behavior_value, o.behavior_death_prob);
  for (int l = 0; l < kLatentStates; ++l) {
    o.start_optimal_value += gt.start[static_cast<std::size_t>(l)] * o.optimal_value[static_cast<std::size_t>(l)];
    o.start_behavior_value += gt.start[static_cast<std::size_t>(l)] * o.behavior_value[static_cast<std::size_t>(l)];
  }
  return o;
}

}  // namespace treatrl
