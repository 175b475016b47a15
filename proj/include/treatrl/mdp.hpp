#pragma once

// Count-based MDP estimate over learned states plus two absorbing states, and
// Bellman solvers for the optimal and fixed-policy action values:
//
//   q(s,a) = sum_{s'} p(s'|s,a) (r(s,a,s') + gamma * sum_{a'} pi(a'|s') q(s',a'))
//
// Actions never observed in a state are masked: they get no value and are
// excluded from every max and every policy.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "action_space.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "state_space.hpp"

namespace treatrl {

struct TaggedTransition {
  StateId s = 0;
  ActionId a = 0;
  StateId s_next = 0;  // may be an absorbing id (n_states or n_states + 1)
  double r = 0.0;
  bool operator==(const TaggedTransition&) const = default;
};

// An episode after state/action/reward tagging, with the per-step context the
// reports need.
struct TaggedEpisode {
  std::string patient_id;
  Outcome outcome = Outcome::Discharge;
  std::vector<TaggedTransition> steps;
  std::vector<ClinicalLabel> labels;
  std::vector<double> vis;
};

struct NextState {
  StateId s_next = 0;
  double prob = 0.0;
  double reward = 0.0;  // mean observed reward for (s, a, s_next)
  std::size_t count = 0;
};

class MdpEstimate {
 public:
  MdpEstimate() = default;
  MdpEstimate(int n_states, int n_actions)
      : n_states_(n_states),
        n_actions_(n_actions),
        counts_(static_cast<std::size_t>(n_states * n_actions), 0),
        rows_(static_cast<std::size_t>(n_states * n_actions)) {}

  int n_states() const { return n_states_; }
  int n_actions() const { return n_actions_; }
  StateId discharge_state() const { return n_states_; }
  StateId death_state() const { return n_states_ + 1; }
  bool absorbing(StateId s) const { return s >= n_states_; }

  std::size_t count(StateId s, ActionId a) const { return counts_[index(s, a)]; }
  bool observed(StateId s, ActionId a) const { return count(s, a) > 0; }
  std::span<const NextState> outcomes(StateId s, ActionId a) const { return rows_[index(s, a)]; }

  std::size_t state_count(StateId s) const {
    std::size_t n = 0;
    for (ActionId a = 0; a < n_actions_; ++a) n += count(s, a);
    return n;
  }

  int observed_action_count(StateId s) const {
    int n = 0;
    for (ActionId a = 0; a < n_actions_; ++a) n += observed(s, a) ? 1 : 0;
    return n;
  }

  friend MdpEstimate estimate_mdp(std::span<const TaggedTransition>, int, int);

 private:
  std::size_t index(StateId s, ActionId a) const { return static_cast<std::size_t>(s * n_actions_ + a); }

  int n_states_ = 0;
  int n_actions_ = 0;
  std::vector<std::size_t> counts_;
  std::vector<std::vector<NextState>> rows_;
};

// Maximum-likelihood estimate: p(s'|s,a) = N(s,a,s') / N(s,a), reward is the
// mean over matching transitions.
inline MdpEstimate estimate_mdp(std::span<const TaggedTransition> tagged, int n_states, int n_actions) {
  if (tagged.empty()) throw DataError("cannot estimate an MDP from zero transitions");
  MdpEstimate mdp(n_states, n_actions);
  std::vector<TaggedTransition> sorted(tagged.begin(), tagged.end());
  for (const auto& t : sorted) {
    if (t.s < 0 || t.s >= n_states) throw DataError("tagged transition has invalid state " + std::to_string(t.s));
    if (t.a < 0 || t.a >= n_actions) throw DataError("tagged transition has invalid action " + std::to_string(t.a));
    if (t.s_next < 0 || t.s_next >= n_states + 2) {
      throw DataError("tagged transition has invalid next state " + std::to_string(t.s_next));
    }
  }
  std::stable_sort(sorted.begin(), sorted.end(), [](const TaggedTransition& x, const TaggedTransition& y) {
    if (x.s != y.s) return x.s < y.s;
    if (x.a != y.a) return x.a < y.a;
    return x.s_next < y.s_next;
  });
  for (std::size_t i = 0; i < sorted.size();) {
    const auto s = sorted[i].s, a = sorted[i].a;
    auto& row = mdp.rows_[mdp.index(s, a)];
    std::size_t n_sa = 0;
    while (i < sorted.size() && sorted[i].s == s && sorted[i].a == a) {
      NextState ns;
      ns.s_next = sorted[i].s_next;
      double sum = 0.0;
      while (i < sorted.size() && sorted[i].s == s && sorted[i].a == a && sorted[i].s_next == ns.s_next) {
        sum += sorted[i].r;
        ++ns.count;
        ++i;
      }
      ns.reward = sum / static_cast<double>(ns.count);
      n_sa += ns.count;
      row.push_back(ns);
    }
    for (auto& ns : row) ns.prob = static_cast<double>(ns.count) / static_cast<double>(n_sa);
    mdp.counts_[mdp.index(s, a)] = n_sa;
  }
  return mdp;
}

struct SolverConfig {
  double gamma = 0.99;
  double tol = 1e-9;
  int max_iter = 100000;

  void check() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
    if (!(tol > 0.0)) throw std::invalid_argument("tol must be positive");
    if (max_iter < 1) throw std::invalid_argument("max_iter must be positive");
  }
};

struct QTable {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> q;   // NaN where masked
  std::vector<char> mask;  // 1 where observed
  double gamma = 0.0;
  double residual = 0.0;
  int iterations = 0;
  std::vector<double> residual_history;  // sup-norm change per sweep

  double operator()(StateId s, ActionId a) const { return q[static_cast<std::size_t>(s * n_actions + a)]; }
  bool observed(StateId s, ActionId a) const { return mask[static_cast<std::size_t>(s * n_actions + a)] != 0; }

  bool visited(StateId s) const {
    for (ActionId a = 0; a < n_actions; ++a) {
      if (observed(s, a)) return true;
    }
    return false;
  }

  // Max over observed actions; 0 for states with none.
  double max_value(StateId s) const {
    double v = -std::numeric_limits<double>::infinity();
    for (ActionId a = 0; a < n_actions; ++a) {
      if (observed(s, a)) v = std::max(v, (*this)(s, a));
    }
    return std::isfinite(v) ? v : 0.0;
  }
};

enum class PolicyKind { Greedy, Behavior, Random, ZeroIntervention, Explicit };

inline std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::Greedy: return "ai";
    case PolicyKind::Behavior: return "clinician";
    case PolicyKind::Random: return "random";
    case PolicyKind::ZeroIntervention: return "zero";
    case PolicyKind::Explicit: return "explicit";
  }
  return "explicit";
}

// Per-state action distribution. States without a distribution (never
// visited) are undefined and must carry no start mass.
struct PolicySpec {
  PolicyKind kind = PolicyKind::Explicit;
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> probs;
  std::vector<char> defined;

  PolicySpec() = default;
  PolicySpec(PolicyKind k, int ns, int na)
      : kind(k), n_states(ns), n_actions(na), probs(static_cast<std::size_t>(ns * na), 0.0),
        defined(static_cast<std::size_t>(ns), 0) {}

  double operator()(StateId s, ActionId a) const { return probs[static_cast<std::size_t>(s * n_actions + a)]; }
  double& at(StateId s, ActionId a) { return probs[static_cast<std::size_t>(s * n_actions + a)]; }
  bool has(StateId s) const { return s >= 0 && s < n_states && defined[static_cast<std::size_t>(s)] != 0; }

  void set_deterministic(StateId s, ActionId a) {
    for (ActionId b = 0; b < n_actions; ++b) at(s, b) = 0.0;
    at(s, a) = 1.0;
    defined[static_cast<std::size_t>(s)] = 1;
  }

  // Most probable action, lowest id on ties.
  ActionId mode(StateId s) const {
    ActionId best = 0;
    for (ActionId a = 1; a < n_actions; ++a) {
      if ((*this)(s, a) > (*this)(s, best)) best = a;
    }
    return best;
  }
};

namespace detail {

template <typename StateValue>
QTable bellman_iterate(const MdpEstimate& mdp, const SolverConfig& cfg, StateValue&& state_value) {
  cfg.check();
  const int ns = mdp.n_states(), na = mdp.n_actions();
  QTable t;
  t.n_states = ns;
  t.n_actions = na;
  t.gamma = cfg.gamma;
  t.q.assign(static_cast<std::size_t>(ns * na), std::numeric_limits<double>::quiet_NaN());
  t.mask.assign(static_cast<std::size_t>(ns * na), 0);
  for (StateId s = 0; s < ns; ++s) {
    for (ActionId a = 0; a < na; ++a) {
      if (mdp.observed(s, a)) {
        t.mask[static_cast<std::size_t>(s * na + a)] = 1;
        t.q[static_cast<std::size_t>(s * na + a)] = 0.0;
      }
    }
  }
  std::vector<double> v(static_cast<std::size_t>(ns + 2), 0.0);
  std::vector<double> next = t.q;
  for (int it = 0; it < cfg.max_iter; ++it) {
    for (StateId s = 0; s < ns; ++s) v[static_cast<std::size_t>(s)] = state_value(t, s);
    double res = 0.0;
    for (StateId s = 0; s < ns; ++s) {
      for (ActionId a = 0; a < na; ++a) {
        if (!t.observed(s, a)) continue;
        double acc = 0.0;
        for (const auto& o : mdp.outcomes(s, a)) {
          acc += o.prob * (o.reward + cfg.gamma * v[static_cast<std::size_t>(o.s_next)]);
        }
        const auto idx = static_cast<std::size_t>(s * na + a);
        res = std::max(res, std::abs(acc - t.q[idx]));
        next[idx] = acc;
      }
    }
    t.q.swap(next);
    t.residual = res;
    t.iterations = it + 1;
    t.residual_history.push_back(res);
    if (res < cfg.tol) return t;
  }
  throw NumericError("Bellman iteration did not converge within " + std::to_string(cfg.max_iter) +
                     " sweeps (residual " + std::to_string(t.residual) + ")");
}

}  // namespace detail

// Value iteration on the optimality operator restricted to observed actions;
// absorbing states, and states with no observed action, have value 0.
inline QTable solve_q_optimal(const MdpEstimate& mdp, const SolverConfig& cfg = {}) {
  return detail::bellman_iterate(mdp, cfg, [](const QTable& t, StateId s) { return t.max_value(s); });
}

inline void check_policy_support(const MdpEstimate& mdp, const PolicySpec& pi) {
  if (pi.n_states != mdp.n_states() || pi.n_actions != mdp.n_actions()) {
    throw DataError("policy dimensions do not match the MDP");
  }
  for (StateId s = 0; s < pi.n_states; ++s) {
    if (!pi.has(s)) continue;
    for (ActionId a = 0; a < pi.n_actions; ++a) {
      if (pi(s, a) > 0.0 && !mdp.observed(s, a)) {
        throw DataError("policy puts mass on unobserved action " + std::to_string(a) + " in state " +
                        std::to_string(s));
      }
    }
  }
}

// Evaluation operator for a fixed policy; undefined states contribute 0.
inline QTable solve_q_policy(const MdpEstimate& mdp, const PolicySpec& pi, const SolverConfig& cfg = {}) {
  check_policy_support(mdp, pi);
  return detail::bellman_iterate(mdp, cfg, [&pi](const QTable& t, StateId s) {
    if (!pi.has(s)) return 0.0;
    double v = 0.0;
    for (ActionId a = 0; a < t.n_actions; ++a) {
      if (pi(s, a) > 0.0) v += pi(s, a) * t(s, a);
    }
    return v;
  });
}

// Deterministic argmax over observed actions; exact ties go to the lower id
// (less intervention).
inline PolicySpec greedy_policy(const QTable& q) {
  PolicySpec pi(PolicyKind::Greedy, q.n_states, q.n_actions);
  for (StateId s = 0; s < q.n_states; ++s) {
    ActionId best = -1;
    for (ActionId a = 0; a < q.n_actions; ++a) {
      if (q.observed(s, a) && (best < 0 || q(s, a) > q(s, best))) best = a;
    }
    if (best >= 0) pi.set_deterministic(s, best);
  }
  return pi;
}

inline PolicySpec behavior_policy(const MdpEstimate& mdp) {
  PolicySpec pi(PolicyKind::Behavior, mdp.n_states(), mdp.n_actions());
  for (StateId s = 0; s < mdp.n_states(); ++s) {
    const auto n = mdp.state_count(s);
    if (n == 0) continue;
    for (ActionId a = 0; a < mdp.n_actions(); ++a) {
      pi.at(s, a) = static_cast<double>(mdp.count(s, a)) / static_cast<double>(n);
    }
    pi.defined[static_cast<std::size_t>(s)] = 1;
  }
  return pi;
}

// pi(a|s) = N(s,a) / N(s).
inline PolicySpec behavior_policy(std::span<const TaggedTransition> tagged, int n_states, int n_actions) {
  PolicySpec pi(PolicyKind::Behavior, n_states, n_actions);
  std::vector<std::size_t> n_s(static_cast<std::size_t>(n_states), 0);
  std::vector<std::size_t> n_sa(static_cast<std::size_t>(n_states * n_actions), 0);
  for (const auto& t : tagged) {
    ++n_s[static_cast<std::size_t>(t.s)];
    ++n_sa[static_cast<std::size_t>(t.s * n_actions + t.a)];
  }
  for (StateId s = 0; s < n_states; ++s) {
    if (n_s[static_cast<std::size_t>(s)] == 0) continue;
    for (ActionId a = 0; a < n_actions; ++a) {
      pi.at(s, a) = static_cast<double>(n_sa[static_cast<std::size_t>(s * n_actions + a)]) /
                    static_cast<double>(n_s[static_cast<std::size_t>(s)]);
    }
    pi.defined[static_cast<std::size_t>(s)] = 1;
  }
  return pi;
}

// Uniform over the actions observed in each state.
inline PolicySpec random_policy(const MdpEstimate& mdp) {
  PolicySpec pi(PolicyKind::Random, mdp.n_states(), mdp.n_actions());
  for (StateId s = 0; s < mdp.n_states(); ++s) {
    const int m = mdp.observed_action_count(s);
    if (m == 0) continue;
    for (ActionId a = 0; a < mdp.n_actions(); ++a) {
      if (mdp.observed(s, a)) pi.at(s, a) = 1.0 / m;
    }
    pi.defined[static_cast<std::size_t>(s)] = 1;
  }
  return pi;
}

// Action 0 (no vasopressor, lowest fluid bin). Where action 0 was never
// observed it falls back to the lowest observed action id.
inline PolicySpec zero_intervention_policy(const MdpEstimate& mdp) {
  PolicySpec pi(PolicyKind::ZeroIntervention, mdp.n_states(), mdp.n_actions());
  for (StateId s = 0; s < mdp.n_states(); ++s) {
    for (ActionId a = 0; a < mdp.n_actions(); ++a) {
      if (mdp.observed(s, a)) {
        pi.set_deterministic(s, a);
        break;
      }
    }
  }
  return pi;
}

// Maps every transition to (s, a, s', r); the last transition of an episode
// moves to the discharge or death absorbing state.
inline std::vector<TaggedEpisode> tag_dataset(const Dataset& ds, const StateModel& model, const ActionGrid& grid,
                                              const std::vector<std::vector<double>>& rewards) {
  if (rewards.size() != ds.episodes.size()) throw DataError("reward list count differs from episode count");
  if (ds.dim + kHistoryDim != model.feature_dim()) {
    throw DataError("dataset feature dimension " + std::to_string(ds.dim) + " does not match the state model (" +
                    std::to_string(model.feature_dim() - kHistoryDim) + ")");
  }
  std::vector<TaggedEpisode> out;
  out.reserve(ds.episodes.size());
  for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
    const auto& ep = ds.episodes[e];
    if (rewards[e].size() != ep.size()) {
      throw DataError("reward count differs from transition count for patient " + ep.patient_id);
    }
    const auto outcome = ep.outcome();
    if (!outcome) throw DataError("episode " + ep.patient_id + " has no outcome");
    TaggedEpisode te;
    te.patient_id = ep.patient_id;
    te.outcome = *outcome;
    std::vector<StateId> states(ep.size());
    for (std::size_t i = 0; i < ep.size(); ++i) states[i] = assign_state(model, build_feature_vector(ep, i));
    for (std::size_t i = 0; i < ep.size(); ++i) {
      const auto& t = ep.transitions[i];
      TaggedTransition tt;
      tt.s = states[i];
      tt.a = discretize_action(grid, t.fluid_ml, t.vis);
      if (i + 1 < ep.size()) {
        tt.s_next = states[i + 1];
      } else {
        tt.s_next = *outcome == Outcome::Death ? model.death_state() : model.discharge_state();
      }
      tt.r = rewards[e][i];
      te.steps.push_back(tt);
      te.labels.push_back(t.clinical_label);
      te.vis.push_back(t.vis);
    }
    out.push_back(std::move(te));
  }
  return out;
}

inline std::vector<TaggedTransition> flatten(std::span<const TaggedEpisode> episodes) {
  std::vector<TaggedTransition> out;
  for (const auto& e : episodes) out.insert(out.end(), e.steps.begin(), e.steps.end());
  return out;
}

// Empirical distribution of first states over the non-absorbing states.
struct StartDistribution {
  std::vector<double> prob;

  double operator()(StateId s) const { return prob[static_cast<std::size_t>(s)]; }
};

inline StartDistribution start_distribution(std::span<const TaggedEpisode> episodes, int n_states) {
  StartDistribution d;
  d.prob.assign(static_cast<std::size_t>(n_states), 0.0);
  std::size_t n = 0;
  for (const auto& e : episodes) {
    if (e.steps.empty()) continue;
    const auto s = e.steps.front().s;
    if (s < 0 || s >= n_states) throw DataError("episode starts in an invalid state");
    d.prob[static_cast<std::size_t>(s)] += 1.0;
    ++n;
  }
  if (n == 0) throw DataError("start distribution needs at least one episode");
  for (auto& p : d.prob) p /= static_cast<double>(n);
  return d;
}

inline nlohmann::json qtable_to_json(const QTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (StateId s = 0; s < t.n_states; ++s) {
    nlohmann::json row = nlohmann::json::array();
    for (ActionId a = 0; a < t.n_actions; ++a) {
      row.push_back(t.observed(s, a) ? nlohmann::json(t(s, a)) : nlohmann::json(nullptr));
    }
    rows.push_back(std::move(row));
  }
  return {{"n_states", t.n_states}, {"n_actions", t.n_actions}, {"gamma", t.gamma},
          {"residual", t.residual}, {"iterations", t.iterations}, {"q", rows}};
}

inline QTable qtable_from_json(const nlohmann::json& j) {
  QTable t;
  t.n_states = j.at("n_states").get<int>();
  t.n_actions = j.at("n_actions").get<int>();
  t.gamma = j.at("gamma").get<double>();
  t.residual = j.at("residual").get<double>();
  t.iterations = j.at("iterations").get<int>();
  const auto& rows = j.at("q");
  if (static_cast<int>(rows.size()) != t.n_states) throw DataError("QTable JSON: row count mismatch");
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != t.n_actions) throw DataError("QTable JSON: column count mismatch");
    for (const auto& v : row) {
      t.q.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>());
      t.mask.push_back(v.is_null() ? 0 : 1);
    }
  }
  return t;
}

}  // namespace treatrl
