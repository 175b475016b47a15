#pragma once

// Policy values over the empirical start distribution, bootstrap policy
// comparison, Q-value vs mortality curve, label-conditioned action
// histograms and within-state treatment homogeneity.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "action_space.hpp"
#include "dataset.hpp"
#include "error.hpp"
#include "mdp.hpp"
#include "stats.hpp"
#include "uncertainty.hpp"

namespace treatrl {

// sum_s start(s) sum_a pi(a|s) q(s,a)
inline double policy_value(const QTable& q, const PolicySpec& pi, const StartDistribution& start) {
  if (static_cast<int>(start.prob.size()) != q.n_states || pi.n_states != q.n_states || pi.n_actions != q.n_actions) {
    throw DataError("policy value: dimension mismatch");
  }
  double v = 0.0;
  for (StateId s = 0; s < q.n_states; ++s) {
    if (start(s) == 0.0) continue;
    if (!pi.has(s)) throw DataError("policy value: start state " + std::to_string(s) + " has no policy");
    double vs = 0.0;
    for (ActionId a = 0; a < q.n_actions; ++a) {
      if (pi(s, a) == 0.0) continue;
      if (!q.observed(s, a)) throw DataError("policy value: mass on unobserved action in state " + std::to_string(s));
      vs += pi(s, a) * q(s, a);
    }
    v += start(s) * vs;
  }
  return v;
}

inline PolicySpec make_policy(PolicyKind kind, const MdpEstimate& mdp, const QTable& q_opt) {
  switch (kind) {
    case PolicyKind::Greedy: return greedy_policy(q_opt);
    case PolicyKind::Behavior: return behavior_policy(mdp);
    case PolicyKind::Random: return random_policy(mdp);
    case PolicyKind::ZeroIntervention: return zero_intervention_policy(mdp);
    case PolicyKind::Explicit: break;
  }
  throw std::invalid_argument("explicit policies cannot be derived from an MDP");
}

// Greedy uses the optimal table directly; every other policy is evaluated
// with its own Bellman recursion.
inline double evaluate_policy(PolicyKind kind, const MdpEstimate& mdp, const QTable& q_opt, const StartDistribution& start,
                              const SolverConfig& cfg) {
  const auto pi = make_policy(kind, mdp, q_opt);
  if (kind == PolicyKind::Greedy) return policy_value(q_opt, pi, start);
  return policy_value(solve_q_policy(mdp, pi, cfg), pi, start);
}

struct PolicyValueResult {
  PolicyKind kind = PolicyKind::Greedy;
  double value = 0.0;
  std::vector<double> replicate_values;
  double lo = 0.0;  // replicate percentile bounds at alpha / 2, 1 - alpha / 2
  double hi = 0.0;
};

struct PolicyComparison {
  std::vector<PolicyValueResult> policies;
  // p[i][j]: one-sided rank-sum p-value for H1 "policy i has higher value
  // than policy j"; adjusted multiplies by the number of unordered pairs.
  std::vector<std::vector<double>> p;
  std::vector<std::vector<double>> p_adjusted;
  int comparisons = 0;
  double alpha = 0.01;
};

inline PolicyComparison compare_policies(const BootstrapEnsemble& ens, std::span<const PolicyKind> kinds,
                                         const SolverConfig& cfg, double alpha = 0.01, int threads = 1) {
  if (ens.replicates.size() < 2) throw std::invalid_argument("policy comparison needs at least 2 replicates");
  PolicyComparison out;
  out.alpha = alpha;
  const auto n = kinds.size();
  out.policies.resize(n);
  std::vector<std::vector<double>> values(n, std::vector<double>(ens.replicates.size()));
  detail::parallel_for(static_cast<int>(ens.replicates.size()), threads, [&](int b) {
    const auto& r = ens.replicates[static_cast<std::size_t>(b)];
    for (std::size_t i = 0; i < n; ++i) values[i][static_cast<std::size_t>(b)] = evaluate_policy(kinds[i], r.mdp, r.q, r.start, cfg);
  });
  for (std::size_t i = 0; i < n; ++i) {
    auto& res = out.policies[i];
    res.kind = kinds[i];
    res.value = evaluate_policy(kinds[i], ens.point_mdp, ens.point, ens.point_start, cfg);
    res.replicate_values = values[i];
    std::tie(res.lo, res.hi) = percentile_interval(values[i], 50.0 * alpha, 100.0 - 50.0 * alpha);
  }
  out.comparisons = static_cast<int>(n * (n - 1) / 2);
  out.p.assign(n, std::vector<double>(n, std::numeric_limits<double>::quiet_NaN()));
  out.p_adjusted = out.p;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      out.p[i][j] = rank_sum_test(values[i], values[j], Alternative::Greater).p_value;
      out.p_adjusted[i][j] = std::min(1.0, out.p[i][j] * std::max(1, out.comparisons));
    }
  }
  return out;
}

struct QMortalityBin {
  double lo = 0.0;
  double hi = 0.0;
  double center = 0.0;
  std::size_t count = 0;
  std::size_t deaths = 0;
  double mortality = std::numeric_limits<double>::quiet_NaN();  // NaN for empty bins
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
};

// Every logged (s,a) with a value contributes q(s,a) and its episode outcome.
// Bins have equal width over the observed q range.
inline std::vector<QMortalityBin> qvalue_mortality_curve(const QTable& q, std::span<const TaggedEpisode> episodes,
                                                         int n_bins = 20) {
  if (n_bins < 1) throw std::invalid_argument("n_bins must be positive");
  std::vector<std::pair<double, bool>> obs;
  for (const auto& e : episodes) {
    for (const auto& t : e.steps) {
      if (t.s < q.n_states && q.observed(t.s, t.a)) obs.emplace_back(q(t.s, t.a), e.outcome == Outcome::Death);
    }
  }
  if (obs.empty()) throw DataError("no valued clinician actions for the mortality curve");
  double lo = obs.front().first, hi = lo;
  for (const auto& [v, d] : obs) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double w = (hi - lo) / n_bins;
  std::vector<QMortalityBin> bins(static_cast<std::size_t>(n_bins));
  for (int b = 0; b < n_bins; ++b) {
    auto& bin = bins[static_cast<std::size_t>(b)];
    bin.lo = lo + w * b;
    bin.hi = b + 1 == n_bins ? hi : lo + w * (b + 1);
    bin.center = (bin.lo + bin.hi) / 2.0;
  }
  for (const auto& [v, died] : obs) {
    const auto b = static_cast<std::size_t>(std::clamp(static_cast<int>((v - lo) / w), 0, n_bins - 1));
    ++bins[b].count;
    if (died) ++bins[b].deaths;
  }
  for (auto& bin : bins) {
    if (bin.count == 0) continue;
    const auto ci = binomial_ci(bin.deaths, bin.count);
    bin.mortality = ci.rate;
    bin.ci_low = ci.low;
    bin.ci_high = ci.high;
  }
  return bins;
}

// Spearman correlation of bin center against mortality over nonempty bins.
inline double mortality_trend(std::span<const QMortalityBin> bins) {
  std::vector<double> x, y;
  for (const auto& b : bins) {
    if (b.count == 0) continue;
    x.push_back(b.center);
    y.push_back(b.mortality);
  }
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  return spearman(x, y);
}

struct LabelHistogram {
  double count = 0.0;
  std::array<double, kFluidBins> fluid{};
  std::array<double, kVasoBins> vaso{};
};

using LabelHistograms = std::array<LabelHistogram, kNumLabels>;

inline LabelHistograms clinician_action_histograms(std::span<const TaggedEpisode> episodes) {
  LabelHistograms h{};
  for (const auto& e : episodes) {
    for (std::size_t i = 0; i < e.steps.size(); ++i) {
      auto& lh = h[static_cast<std::size_t>(e.labels[i])];
      const auto b = action_components(e.steps[i].a);
      lh.count += 1.0;
      lh.fluid[static_cast<std::size_t>(b.fluid_bin - 1)] += 1.0;
      lh.vaso[static_cast<std::size_t>(b.vaso_bin - 1)] += 1.0;
    }
  }
  return h;
}

// Policy action mass at every logged state occurrence, by the label at that
// occurrence.
inline LabelHistograms policy_action_histograms(const PolicySpec& pi, std::span<const TaggedEpisode> episodes) {
  LabelHistograms h{};
  for (const auto& e : episodes) {
    for (std::size_t i = 0; i < e.steps.size(); ++i) {
      const auto s = e.steps[i].s;
      if (!pi.has(s)) throw DataError("policy undefined in logged state " + std::to_string(s));
      auto& lh = h[static_cast<std::size_t>(e.labels[i])];
      lh.count += 1.0;
      for (ActionId a = 0; a < pi.n_actions; ++a) {
        const double w = pi(s, a);
        if (w == 0.0) continue;
        const auto b = action_components(a);
        lh.fluid[static_cast<std::size_t>(b.fluid_bin - 1)] += w;
        lh.vaso[static_cast<std::size_t>(b.vaso_bin - 1)] += w;
      }
    }
  }
  return h;
}

struct HomogeneityState {
  StateId state = 0;
  double p_given_shock = 0.0;
  double prevalence = 0.0;
  std::vector<double> shock_vis;
  std::vector<double> other_vis;
  double median_shock = 0.0;
  double median_other = 0.0;
  double gap = 0.0;
};

struct HomogeneityReport {
  std::string variant;
  std::vector<double> p_state_given_shock;
  std::vector<double> p_state_given_other;
  std::vector<HomogeneityState> top_states;
  double median_gap = std::numeric_limits<double>::quiet_NaN();
  std::string note;
};

// Picks the states with the highest share of septic-shock windows among
// states that hold both shock and non-shock windows, and averages the
// absolute gap between the two groups' median VIS.
inline HomogeneityReport state_homogeneity_report(std::string variant, std::span<const TaggedEpisode> episodes,
                                                  int n_states, std::size_t top_k = 15) {
  HomogeneityReport rep;
  rep.variant = std::move(variant);
  rep.p_state_given_shock.assign(static_cast<std::size_t>(n_states), 0.0);
  rep.p_state_given_other.assign(static_cast<std::size_t>(n_states), 0.0);
  std::vector<std::vector<double>> shock(static_cast<std::size_t>(n_states)), other(static_cast<std::size_t>(n_states));
  std::size_t n_shock = 0, n_other = 0;
  for (const auto& e : episodes) {
    for (std::size_t i = 0; i < e.steps.size(); ++i) {
      const auto s = static_cast<std::size_t>(e.steps[i].s);
      if (e.labels[i] == ClinicalLabel::SepticShock) {
        shock[s].push_back(e.vis[i]);
        ++n_shock;
      } else {
        other[s].push_back(e.vis[i]);
        ++n_other;
      }
    }
  }
  for (std::size_t s = 0; s < static_cast<std::size_t>(n_states); ++s) {
    if (n_shock) rep.p_state_given_shock[s] = static_cast<double>(shock[s].size()) / static_cast<double>(n_shock);
    if (n_other) rep.p_state_given_other[s] = static_cast<double>(other[s].size()) / static_cast<double>(n_other);
  }
  if (n_shock == 0) {
    rep.note = "no septic shock windows; shock conditional is empty";
    return rep;
  }
  std::vector<StateId> candidates;
  for (StateId s = 0; s < n_states; ++s) {
    if (!shock[static_cast<std::size_t>(s)].empty() && !other[static_cast<std::size_t>(s)].empty()) candidates.push_back(s);
  }
  auto prevalence = [&](StateId s) {
    const auto n_s = static_cast<double>(shock[static_cast<std::size_t>(s)].size());
    return n_s / (n_s + static_cast<double>(other[static_cast<std::size_t>(s)].size()));
  };
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](StateId a, StateId b) { return prevalence(a) > prevalence(b); });
  if (candidates.size() < top_k) {
    rep.note = "only " + std::to_string(candidates.size()) + " states hold both shock and non-shock windows";
  } else {
    candidates.resize(top_k);
  }
  if (candidates.empty()) return rep;
  double sum = 0.0;
  for (StateId s : candidates) {
    HomogeneityState hs;
    hs.state = s;
    hs.p_given_shock = rep.p_state_given_shock[static_cast<std::size_t>(s)];
    hs.prevalence = prevalence(s);
    hs.shock_vis = shock[static_cast<std::size_t>(s)];
    hs.other_vis = other[static_cast<std::size_t>(s)];
    hs.median_shock = median(hs.shock_vis);
    hs.median_other = median(hs.other_vis);
    hs.gap = std::abs(hs.median_shock - hs.median_other);
    sum += hs.gap;
    rep.top_states.push_back(std::move(hs));
  }
  rep.median_gap = sum / static_cast<double>(rep.top_states.size());
  return rep;
}

}  // namespace treatrl
