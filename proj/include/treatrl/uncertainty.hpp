#pragma once

// Patient-level bootstrap of the value function and per-state action
// verdicts from one-sided rank-sum tests against the recommended action.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "action_space.hpp"
#include "error.hpp"
#include "mdp.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace treatrl {

struct BootstrapConfig {
  int replicates = 100;
  std::uint64_t seed = 1;
  SolverConfig solver{};
  int threads = 1;  // 0 = hardware concurrency
  double max_discard = 0.2;

  void check() const {
    if (replicates < 2) throw std::invalid_argument("bootstrap needs at least 2 replicates");
    solver.check();
  }
};

struct Replicate {
  int index = 0;
  std::uint64_t seed = 0;
  QTable q;
  MdpEstimate mdp;
  StartDistribution start;
};

struct BootstrapEnsemble {
  int n_states = 0;
  int n_actions = 0;
  std::uint64_t master_seed = 0;
  int requested = 0;
  QTable point;
  MdpEstimate point_mdp;
  StartDistribution point_start;
  std::vector<Replicate> replicates;  // kept replicates, ascending index
  std::vector<int> discarded;

  // Replicate values of q(s, a), only from replicates that observed (s, a).
  std::vector<double> samples(StateId s, ActionId a) const {
    std::vector<double> out;
    for (const auto& r : replicates) {
      if (r.q.observed(s, a)) out.push_back(r.q(s, a));
    }
    return out;
  }
};

// Patient indices drawn with replacement for replicate `b`; a pure function of
// (n, master seed, b).
inline std::vector<std::size_t> resample_patients(std::size_t n, std::uint64_t master, int b) {
  Rng rng = make_rng(master, static_cast<std::uint64_t>(b));
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

inline std::vector<TaggedEpisode> gather(std::span<const TaggedEpisode> episodes, std::span<const std::size_t> idx) {
  std::vector<TaggedEpisode> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(episodes[i]);
  return out;
}

namespace detail {

inline Replicate replicate_model(std::span<const TaggedEpisode> episodes, int n_states, int n_actions,
                                 std::uint64_t master, int b) {
  const auto sample = gather(episodes, resample_patients(episodes.size(), master, b));
  Replicate r;
  r.index = b;
  r.seed = derive_seed(master, static_cast<std::uint64_t>(b));
  const auto flat = flatten(sample);
  r.mdp = estimate_mdp(flat, n_states, n_actions);
  r.start = start_distribution(sample, n_states);
  return r;
}

template <typename Fn>
void parallel_for(int n, int threads, Fn&& fn) {
  int t = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  t = std::min(t, n);
  if (t <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(t));
  for (int w = 0; w < t; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += t) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

// Resamples whole episodes with replacement, re-estimates the MDP and
// re-solves Q per replicate. State, action and reward tags stay fixed. A
// replicate that fails to converge is discarded; more than max_discard of
// them is an error.
inline BootstrapEnsemble bootstrap_ensemble(std::span<const TaggedEpisode> episodes, int n_states, int n_actions,
                                            const BootstrapConfig& cfg) {
  cfg.check();
  if (episodes.size() < 1) throw DataError("bootstrap needs at least one patient");
  BootstrapEnsemble ens;
  ens.n_states = n_states;
  ens.n_actions = n_actions;
  ens.master_seed = cfg.seed;
  ens.requested = cfg.replicates;
  const auto all = flatten(episodes);
  ens.point_mdp = estimate_mdp(all, n_states, n_actions);
  ens.point = solve_q_optimal(ens.point_mdp, cfg.solver);
  ens.point_start = start_distribution(episodes, n_states);

  std::vector<std::optional<Replicate>> slots(static_cast<std::size_t>(cfg.replicates));
  detail::parallel_for(cfg.replicates, cfg.threads, [&](int b) {
    auto r = detail::replicate_model(episodes, n_states, n_actions, cfg.seed, b);
    try {
      r.q = solve_q_optimal(r.mdp, cfg.solver);
    } catch (const NumericError&) {
      return;
    }
    slots[static_cast<std::size_t>(b)] = std::move(r);
  });
  for (int b = 0; b < cfg.replicates; ++b) {
    if (slots[static_cast<std::size_t>(b)]) {
      ens.replicates.push_back(std::move(*slots[static_cast<std::size_t>(b)]));
    } else {
      ens.discarded.push_back(b);
    }
  }
  if (static_cast<double>(ens.discarded.size()) > cfg.max_discard * cfg.replicates || ens.replicates.size() < 2) {
    throw NumericError(std::to_string(ens.discarded.size()) + " of " + std::to_string(cfg.replicates) +
                       " bootstrap replicates failed to converge");
  }
  return ens;
}

// Replicate Q tables only; MDPs are rebuilt from the seed by restore_ensemble.
inline nlohmann::json ensemble_to_json(const BootstrapEnsemble& ens) {
  nlohmann::json reps = nlohmann::json::array();
  for (const auto& r : ens.replicates) reps.push_back({{"index", r.index}, {"seed", r.seed}, {"q", qtable_to_json(r.q)}});
  return {{"master_seed", ens.master_seed}, {"requested", ens.requested}, {"n_states", ens.n_states},
          {"n_actions", ens.n_actions},     {"discarded", ens.discarded},  {"replicates", reps}};
}

// Rebuilds replicate MDPs and start distributions for the stored replicate
// indices; the episodes must be the ones the ensemble was built from.
inline BootstrapEnsemble restore_ensemble(const nlohmann::json& j, std::span<const TaggedEpisode> episodes,
                                          const QTable& point) {
  BootstrapEnsemble ens;
  ens.master_seed = j.at("master_seed").get<std::uint64_t>();
  ens.requested = j.at("requested").get<int>();
  ens.n_states = j.at("n_states").get<int>();
  ens.n_actions = j.at("n_actions").get<int>();
  ens.discarded = j.at("discarded").get<std::vector<int>>();
  if (point.n_states != ens.n_states || point.n_actions != ens.n_actions) {
    throw DataError("ensemble dimensions do not match the fitted Q table");
  }
  ens.point = point;
  const auto all = flatten(episodes);
  ens.point_mdp = estimate_mdp(all, ens.n_states, ens.n_actions);
  ens.point_start = start_distribution(episodes, ens.n_states);
  for (const auto& rj : j.at("replicates")) {
    auto r = detail::replicate_model(episodes, ens.n_states, ens.n_actions, ens.master_seed, rj.at("index").get<int>());
    r.q = qtable_from_json(rj.at("q"));
    for (StateId s = 0; s < ens.n_states; ++s) {
      for (ActionId a = 0; a < ens.n_actions; ++a) {
        if (r.q.observed(s, a) != r.mdp.observed(s, a)) {
          throw DataError("ensemble replicate " + std::to_string(r.index) + " does not match the dataset");
        }
      }
    }
    ens.replicates.push_back(std::move(r));
  }
  return ens;
}

// Q tables only, without replicate MDPs. Enough for verdicts and episode
// reports, not for policy comparison.
inline BootstrapEnsemble load_ensemble_tables(const nlohmann::json& j, const QTable& point) {
  BootstrapEnsemble ens;
  ens.master_seed = j.at("master_seed").get<std::uint64_t>();
  ens.requested = j.at("requested").get<int>();
  ens.n_states = j.at("n_states").get<int>();
  ens.n_actions = j.at("n_actions").get<int>();
  ens.discarded = j.at("discarded").get<std::vector<int>>();
  if (point.n_states != ens.n_states || point.n_actions != ens.n_actions) {
    throw DataError("ensemble dimensions do not match the fitted Q table");
  }
  ens.point = point;
  for (const auto& rj : j.at("replicates")) {
    Replicate r;
    r.index = rj.at("index").get<int>();
    r.seed = rj.at("seed").get<std::uint64_t>();
    r.q = qtable_from_json(rj.at("q"));
    if (r.q.n_states != ens.n_states || r.q.n_actions != ens.n_actions) throw DataError("ensemble replicate dimension mismatch");
    ens.replicates.push_back(std::move(r));
  }
  return ens;
}

enum class VerdictStatus { Recommended, Accepted, Rejected, Unobserved };

inline std::string to_string(VerdictStatus v) {
  switch (v) {
    case VerdictStatus::Recommended: return "recommended";
    case VerdictStatus::Accepted: return "accepted";
    case VerdictStatus::Rejected: return "rejected";
    case VerdictStatus::Unobserved: return "unobserved";
  }
  return "unobserved";
}

// Lower is better when merging verdicts over a margin.
inline int precedence(VerdictStatus v) { return static_cast<int>(v); }

struct Verdict {
  ActionId action = 0;
  VerdictStatus status = VerdictStatus::Unobserved;
  std::optional<double> p_value;
  double ci_low = std::numeric_limits<double>::quiet_NaN();
  double ci_high = std::numeric_limits<double>::quiet_NaN();
  double q_point = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_samples = 0;
};

inline std::pair<double, double> percentile_interval(std::vector<double> v, double lo = 0.5, double hi = 99.5) {
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  std::sort(v.begin(), v.end());
  return {nearest_rank_percentile(v, lo), nearest_rank_percentile(v, hi)};
}

inline ActionId recommended_action(const QTable& q, StateId s) {
  ActionId best = -1;
  for (ActionId a = 0; a < q.n_actions; ++a) {
    if (q.observed(s, a) && (best < 0 || q(s, a) > q(s, best))) best = a;
  }
  if (best < 0) throw DataError("state " + std::to_string(s) + " was never visited");
  return best;
}

// Each observed non-recommended action is tested one-sided (its replicate
// values lower than the recommendation's) at alpha / (observed - 1).
inline std::vector<Verdict> action_verdicts(const BootstrapEnsemble& ens, StateId s, double alpha = 0.01) {
  if (s < 0 || s >= ens.n_states || !ens.point.visited(s)) {
    throw DataError("state " + std::to_string(s) + " was never visited");
  }
  const ActionId rec = recommended_action(ens.point, s);
  const auto rec_samples = ens.samples(s, rec);
  int observed = 0;
  for (ActionId a = 0; a < ens.n_actions; ++a) observed += ens.point.observed(s, a) ? 1 : 0;
  const double threshold = alpha / std::max(1, observed - 1);

  std::vector<Verdict> out;
  for (ActionId a = 0; a < ens.n_actions; ++a) {
    Verdict v;
    v.action = a;
    if (!ens.point.observed(s, a)) {
      out.push_back(v);
      continue;
    }
    v.q_point = ens.point(s, a);
    const auto samples = a == rec ? rec_samples : ens.samples(s, a);
    v.n_samples = samples.size();
    std::tie(v.ci_low, v.ci_high) = percentile_interval(samples);
    if (a == rec) {
      v.status = VerdictStatus::Recommended;
    } else if (samples.empty() || rec_samples.empty()) {
      v.status = VerdictStatus::Accepted;
    } else {
      v.p_value = rank_sum_test(samples, rec_samples, Alternative::Less).p_value;
      v.status = *v.p_value < threshold ? VerdictStatus::Rejected : VerdictStatus::Accepted;
    }
    out.push_back(v);
  }
  return out;
}

struct EpisodeRow {
  int step_index = 0;
  StateId state = 0;
  bool visited = true;
  ActionId clinician_action = 0;
  std::optional<VerdictStatus> status;
  std::optional<double> p_value;
  std::optional<ActionId> recommended;
  std::vector<int> accepted_fluid_bins;
  std::vector<int> accepted_vaso_bins;
  std::array<std::optional<double>, kFluidBins> min_p_fluid{};
  std::array<std::optional<double>, kVasoBins> min_p_vaso{};
};

// Memoizes per-state verdicts for repeated report queries.
class VerdictCache {
 public:
  VerdictCache(const BootstrapEnsemble& ens, double alpha) : ens_(ens), alpha_(alpha) {}

  const std::vector<Verdict>& get(StateId s) {
    auto it = cache_.find(s);
    if (it == cache_.end()) it = cache_.emplace(s, action_verdicts(ens_, s, alpha_)).first;
    return it->second;
  }

 private:
  const BootstrapEnsemble& ens_;
  double alpha_;
  std::map<StateId, std::vector<Verdict>> cache_;
};

namespace detail {

inline std::optional<double> min_p(std::optional<double> acc, std::optional<double> p) {
  if (!p) return acc;
  return acc ? std::min(*acc, *p) : p;
}

}  // namespace detail

// One row per logged window. A fluid (vaso) bin takes the best verdict over
// the paired vaso (fluid) bins in the order recommended, accepted, rejected,
// unobserved.
inline EpisodeRow report_step(VerdictCache& cache, const BootstrapEnsemble& ens, StateId s, ActionId clinician,
                              int step_index) {
  EpisodeRow row;
  row.step_index = step_index;
  row.state = s;
  row.clinician_action = clinician;
  if (s < 0 || s >= ens.n_states || !ens.point.visited(s)) {
    row.visited = false;
    return row;
  }
  const auto& verdicts = cache.get(s);
  row.status = verdicts[static_cast<std::size_t>(clinician)].status;
  row.p_value = verdicts[static_cast<std::size_t>(clinician)].p_value;
  row.recommended = recommended_action(ens.point, s);
  std::array<int, kFluidBins> fluid_best;
  std::array<int, kVasoBins> vaso_best;
  fluid_best.fill(precedence(VerdictStatus::Unobserved));
  vaso_best.fill(precedence(VerdictStatus::Unobserved));
  for (const auto& v : verdicts) {
    const auto b = action_components(v.action);
    const auto fi = static_cast<std::size_t>(b.fluid_bin - 1), vi = static_cast<std::size_t>(b.vaso_bin - 1);
    fluid_best[fi] = std::min(fluid_best[fi], precedence(v.status));
    vaso_best[vi] = std::min(vaso_best[vi], precedence(v.status));
    row.min_p_fluid[fi] = detail::min_p(row.min_p_fluid[fi], v.p_value);
    row.min_p_vaso[vi] = detail::min_p(row.min_p_vaso[vi], v.p_value);
  }
  for (int f = 0; f < kFluidBins; ++f) {
    if (fluid_best[static_cast<std::size_t>(f)] <= precedence(VerdictStatus::Accepted)) row.accepted_fluid_bins.push_back(f + 1);
  }
  for (int v = 0; v < kVasoBins; ++v) {
    if (vaso_best[static_cast<std::size_t>(v)] <= precedence(VerdictStatus::Accepted)) row.accepted_vaso_bins.push_back(v + 1);
  }
  return row;
}

inline std::vector<EpisodeRow> episode_report(VerdictCache& cache, const BootstrapEnsemble& ens,
                                              std::span<const StateId> states, std::span<const ActionId> actions) {
  if (states.size() != actions.size()) throw std::invalid_argument("states and actions differ in length");
  std::vector<EpisodeRow> rows;
  for (std::size_t i = 0; i < states.size(); ++i) {
    rows.push_back(report_step(cache, ens, states[i], actions[i], static_cast<int>(i)));
  }
  return rows;
}

inline std::vector<EpisodeRow> episode_report(const BootstrapEnsemble& ens, const TaggedEpisode& ep, double alpha = 0.01) {
  VerdictCache cache(ens, alpha);
  std::vector<StateId> s;
  std::vector<ActionId> a;
  for (const auto& t : ep.steps) {
    s.push_back(t.s);
    a.push_back(t.a);
  }
  return episode_report(cache, ens, s, a);
}

struct RejectionSummary {
  std::size_t actions = 0;
  std::size_t rejected = 0;
  double fraction() const { return actions == 0 ? 0.0 : static_cast<double>(rejected) / static_cast<double>(actions); }
};

// Share of logged clinician actions rejected against their own state's
// recommendation.
inline RejectionSummary rejection_fraction(const BootstrapEnsemble& ens, std::span<const TaggedEpisode> episodes,
                                           double alpha = 0.01) {
  VerdictCache cache(ens, alpha);
  RejectionSummary out;
  for (const auto& e : episodes) {
    for (const auto& t : e.steps) {
      ++out.actions;
      if (cache.get(t.s)[static_cast<std::size_t>(t.a)].status == VerdictStatus::Rejected) ++out.rejected;
    }
  }
  return out;
}

}  // namespace treatrl
