#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

#include "treatrl/mdp.hpp"

using namespace treatrl;

namespace {

TaggedTransition tr(StateId s, ActionId a, StateId s_next, double r) { return {s, a, s_next, r}; }

// Random 3-state, 2-action chain where each (s,a) is seen `reps` times with
// random successors, absorbing ids 3 (discharge, +1) and 4 (death, -1).
std::vector<TaggedTransition> random_chain(std::uint64_t seed, int reps = 20) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> next(0, 4);
  std::uniform_real_distribution<double> u(-0.2, 0.2);
  std::vector<TaggedTransition> out;
  for (int s = 0; s < 3; ++s) {
    for (int a = 0; a < 2; ++a) {
      for (int k = 0; k < reps; ++k) {
        const int sn = next(rng);
        const double r = sn == 3 ? 1.0 : sn == 4 ? -1.0 : u(rng);
        out.push_back(tr(s, a, sn, r));
      }
    }
  }
  return out;
}

struct Dense {
  Eigen::MatrixXd p[2];  // 3 x 5 per action
  Eigen::Vector3d r[2];  // expected reward per action
};

Dense dense_model(const std::vector<TaggedTransition>& ts) {
  Dense d;
  for (int a = 0; a < 2; ++a) {
    d.p[a] = Eigen::MatrixXd::Zero(3, 5);
    d.r[a].setZero();
  }
  Eigen::Matrix<double, 3, 2> n = Eigen::Matrix<double, 3, 2>::Zero();
  for (const auto& t : ts) {
    d.p[t.a](t.s, t.s_next) += 1.0;
    d.r[t.a](t.s) += t.r;
    n(t.s, t.a) += 1.0;
  }
  for (int a = 0; a < 2; ++a) {
    for (int s = 0; s < 3; ++s) {
      d.p[a].row(s) /= n(s, a);
      d.r[a](s) /= n(s, a);
    }
  }
  return d;
}

// V for a stochastic policy by a linear solve on the transient block.
Eigen::Vector3d solve_v(const Dense& d, const Eigen::Matrix<double, 3, 2>& pi, double gamma) {
  Eigen::Matrix3d pp = Eigen::Matrix3d::Zero();
  Eigen::Vector3d rr = Eigen::Vector3d::Zero();
  for (int a = 0; a < 2; ++a) {
    pp += pi.col(a).asDiagonal() * d.p[a].leftCols(3);
    rr += pi.col(a).cwiseProduct(d.r[a]);
  }
  return (Eigen::Matrix3d::Identity() - gamma * pp).lu().solve(rr);
}

double q_from_v(const Dense& d, const Eigen::Vector3d& v, int s, int a, double gamma) {
  return d.r[a](s) + gamma * d.p[a].row(s).leftCols(3).dot(v);
}

}  // namespace

TEST(Mdp, SingleTerminalTransition) {
  const std::vector<TaggedTransition> ts{tr(0, 0, 1, 1.0)};
  const auto mdp = estimate_mdp(ts, 1, 1);
  const auto q = solve_q_optimal(mdp);
  EXPECT_EQ(q(0, 0), 1.0);
}

TEST(Mdp, GreedyPicksTheSurvivingAction) {
  const std::vector<TaggedTransition> ts{tr(0, 0, 2, -1.0), tr(0, 1, 1, 1.0)};
  const auto q = solve_q_optimal(estimate_mdp(ts, 1, 2));
  EXPECT_EQ(q(0, 0), -1.0);
  EXPECT_EQ(q(0, 1), 1.0);
  EXPECT_EQ(greedy_policy(q).mode(0), 1);
}

TEST(Mdp, EstimateProbabilitiesAndRewards) {
  const std::vector<TaggedTransition> ts{tr(0, 0, 1, 0.2), tr(0, 0, 1, 0.4), tr(0, 0, 2, -1.0),
                                         tr(0, 1, 2, 0.0)};
  const auto mdp = estimate_mdp(ts, 2, 3);
  const auto row = mdp.outcomes(0, 0);
  ASSERT_EQ(row.size(), 2u);
  EXPECT_DOUBLE_EQ(row[0].prob, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(row[1].prob, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(row[0].reward, 0.3);
  EXPECT_EQ(mdp.count(0, 0), 3u);
  EXPECT_FALSE(mdp.observed(0, 2));
  EXPECT_FALSE(mdp.observed(1, 0));
  EXPECT_EQ(mdp.state_count(0), 4u);
  EXPECT_EQ(mdp.observed_action_count(0), 2);

  const auto q = solve_q_optimal(mdp);
  EXPECT_TRUE(std::isnan(q(0, 2)));
  EXPECT_FALSE(q.visited(1));
  const auto beh = behavior_policy(mdp);
  EXPECT_DOUBLE_EQ(beh(0, 0), 0.75);
  EXPECT_DOUBLE_EQ(beh(0, 1), 0.25);
  EXPECT_FALSE(beh.has(1));
  const auto beh2 = behavior_policy(ts, 2, 3);
  EXPECT_EQ(beh2.probs, beh.probs);
}

TEST(Mdp, InvalidTransitionsAreRejected) {
  EXPECT_THROW(estimate_mdp(std::vector<TaggedTransition>{}, 2, 2), DataError);
  EXPECT_THROW(estimate_mdp(std::vector<TaggedTransition>{tr(2, 0, 0, 0.0)}, 2, 2), DataError);
  EXPECT_THROW(estimate_mdp(std::vector<TaggedTransition>{tr(0, 0, 4, 0.0)}, 2, 2), DataError);
  EXPECT_THROW(estimate_mdp(std::vector<TaggedTransition>{tr(0, 5, 1, 0.0)}, 2, 2), DataError);
}

TEST(Mdp, GreedyTiesGoToLowerId) {
  const std::vector<TaggedTransition> ts{tr(0, 3, 1, 1.0), tr(0, 1, 1, 1.0), tr(0, 2, 2, -1.0)};
  EXPECT_EQ(greedy_policy(solve_q_optimal(estimate_mdp(ts, 1, 4))).mode(0), 1);
}

TEST(Mdp, OptimalMatchesPolicyEnumerationOracle) {
  const double gamma = 0.9;
  SolverConfig cfg{gamma, 1e-14, 100000};
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto ts = random_chain(seed);
    const auto d = dense_model(ts);
    // best V over the 8 deterministic policies, state by state
    Eigen::Vector3d best = Eigen::Vector3d::Constant(-1e300);
    for (int code = 0; code < 8; ++code) {
      Eigen::Matrix<double, 3, 2> pi = Eigen::Matrix<double, 3, 2>::Zero();
      for (int s = 0; s < 3; ++s) pi(s, (code >> s) & 1) = 1.0;
      best = best.cwiseMax(solve_v(d, pi, gamma));
    }
    const auto q = solve_q_optimal(estimate_mdp(ts, 3, 2), cfg);
    for (int s = 0; s < 3; ++s) {
      for (int a = 0; a < 2; ++a) EXPECT_NEAR(q(s, a), q_from_v(d, best, s, a, gamma), 1e-12);
    }
  }
}

TEST(Mdp, PolicyEvaluationMatchesLinearSolve) {
  const double gamma = 0.95;
  SolverConfig cfg{gamma, 1e-14, 100000};
  for (std::uint64_t seed = 20; seed < 25; ++seed) {
    const auto ts = random_chain(seed);
    const auto mdp = estimate_mdp(ts, 3, 2);
    const auto beh = behavior_policy(mdp);
    Eigen::Matrix<double, 3, 2> pi;
    for (int s = 0; s < 3; ++s) {
      for (int a = 0; a < 2; ++a) pi(s, a) = beh(s, a);
    }
    const auto d = dense_model(ts);
    const auto v = solve_v(d, pi, gamma);
    const auto q = solve_q_policy(mdp, beh, cfg);
    for (int s = 0; s < 3; ++s) {
      for (int a = 0; a < 2; ++a) EXPECT_NEAR(q(s, a), q_from_v(d, v, s, a, gamma), 1e-12);
    }
  }
}

TEST(Mdp, ResidualsContract) {
  const double gamma = 0.9;
  const auto q = solve_q_optimal(estimate_mdp(random_chain(3), 3, 2), {gamma, 1e-12, 100000});
  ASSERT_GE(q.residual_history.size(), 3u);
  for (std::size_t i = 2; i < q.residual_history.size(); ++i) {
    EXPECT_LE(q.residual_history[i], gamma * q.residual_history[i - 1] + 1e-15);
  }
  EXPECT_LT(q.residual, 1e-12);
  EXPECT_EQ(q.iterations, static_cast<int>(q.residual_history.size()));
}

TEST(Mdp, NonConvergenceIsANumericError) {
  EXPECT_THROW(solve_q_optimal(estimate_mdp(random_chain(3), 3, 2), {0.99, 1e-12, 3}), NumericError);
  EXPECT_THROW(solve_q_optimal(estimate_mdp(random_chain(3), 3, 2), {0.0, 1e-9, 10}), std::invalid_argument);
}

TEST(Mdp, RewardScalingScalesValues) {
  auto ts = random_chain(8);
  const auto q1 = solve_q_optimal(estimate_mdp(ts, 3, 2), {0.9, 1e-13, 100000});
  for (auto& t : ts) t.r *= 3.0;
  const auto q3 = solve_q_optimal(estimate_mdp(ts, 3, 2), {0.9, 1e-13, 100000});
  for (int s = 0; s < 3; ++s) {
    for (int a = 0; a < 2; ++a) EXPECT_NEAR(q3(s, a), 3.0 * q1(s, a), 1e-10);
  }
  EXPECT_EQ(greedy_policy(q1).probs, greedy_policy(q3).probs);
}

TEST(Mdp, OptimalDominatesEveryPolicy) {
  const auto mdp = estimate_mdp(random_chain(11), 3, 2);
  const SolverConfig cfg{0.9, 1e-12, 100000};
  const auto opt = solve_q_optimal(mdp, cfg);
  for (const auto& pi : {behavior_policy(mdp), random_policy(mdp), zero_intervention_policy(mdp)}) {
    const auto q = solve_q_policy(mdp, pi, cfg);
    for (int s = 0; s < 3; ++s) {
      for (int a = 0; a < 2; ++a) EXPECT_LE(q(s, a), opt(s, a) + 1e-10);
    }
  }
  const auto greedy = solve_q_policy(mdp, greedy_policy(opt), cfg);
  for (int s = 0; s < 3; ++s) EXPECT_NEAR(greedy.max_value(s), opt.max_value(s), 1e-9);
}

TEST(Mdp, PolicyOnUnobservedActionIsRejected) {
  const std::vector<TaggedTransition> ts{tr(0, 1, 1, 1.0)};
  const auto mdp = estimate_mdp(ts, 1, 3);
  PolicySpec pi(PolicyKind::Explicit, 1, 3);
  pi.set_deterministic(0, 0);
  EXPECT_THROW(solve_q_policy(mdp, pi), DataError);
  // action 0 unobserved: zero intervention falls back to action 1
  EXPECT_EQ(zero_intervention_policy(mdp).mode(0), 1);
  EXPECT_DOUBLE_EQ(random_policy(mdp)(0, 1), 1.0);
}

TEST(Mdp, QTableJsonRoundTrip) {
  const std::vector<TaggedTransition> ts{tr(0, 0, 1, 0.5), tr(0, 0, 2, -1.0), tr(1, 2, 2, -1.0)};
  const auto q = solve_q_optimal(estimate_mdp(ts, 2, 3));
  const auto back = qtable_from_json(qtable_to_json(q));
  EXPECT_EQ(back.mask, q.mask);
  for (std::size_t i = 0; i < q.q.size(); ++i) {
    if (q.mask[i]) EXPECT_EQ(back.q[i], q.q[i]);
    else EXPECT_TRUE(std::isnan(back.q[i]));
  }
  EXPECT_EQ(qtable_to_json(back).dump(), qtable_to_json(q).dump());
}

namespace {

Dataset tiny_dataset() {
  std::vector<Episode> eps;
  for (int p = 0; p < 4; ++p) {
    Episode ep;
    ep.patient_id = "t" + std::to_string(p);
    for (int s = 0; s < 3; ++s) {
      Transition t;
      t.patient_id = ep.patient_id;
      t.step_index = s;
      t.features = {p < 2 ? -5.0 : 5.0};
      t.fluid_ml = s == 0 ? 0.0 : 1000.0;
      t.vis = s == 2 ? 50.0 : 0.0;
      ep.transitions.push_back(t);
    }
    ep.transitions.back().terminal = p % 2 ? Terminal::Death : Terminal::Discharge;
    eps.push_back(ep);
  }
  return Dataset::from_episodes(eps, 1);
}

// Two centroids on the raw first feature; the history block is ignored by
// giving it a huge scale.
StateModel sign_model() {
  Standardizer sd;
  sd.mean = Eigen::VectorXd::Zero(1 + kHistoryDim);
  sd.scale = Eigen::VectorXd::Constant(1 + kHistoryDim, 1e12);
  sd.scale(0) = 1.0;
  StateModel m;
  m.projection = StateProjection::Standardized;
  m.cca = CcaModel::standardize_only(sd);
  m.centroids.resize(2, 1 + kHistoryDim);
  m.centroids.setZero();
  m.centroids(0, 0) = -5.0;
  m.centroids(1, 0) = 5.0;
  return m;
}

}  // namespace

TEST(Tagging, StatesActionsAndAbsorbingTargets) {
  const auto ds = tiny_dataset();
  const auto model = sign_model();
  std::vector<std::vector<double>> rewards;
  for (const auto& ep : ds.episodes) rewards.push_back({0.0, 0.0, ep.outcome() == Outcome::Death ? -1.0 : 1.0});
  const auto tagged = tag_dataset(ds, model, ActionGrid::reference(), rewards);
  ASSERT_EQ(tagged.size(), 4u);
  for (int p = 0; p < 4; ++p) {
    const auto& te = tagged[static_cast<std::size_t>(p)];
    const StateId s = p < 2 ? 0 : 1;
    EXPECT_EQ(te.steps[0].s, s);
    EXPECT_EQ(te.steps[0].s_next, s);
    EXPECT_EQ(te.steps[2].s_next, p % 2 ? 3 : 2);
    EXPECT_EQ(te.steps[0].a, 0);
    EXPECT_EQ(te.steps[1].a, 4);   // fluid bin 5, vaso bin 1
    EXPECT_EQ(te.steps[2].a, 29);  // fluid bin 5, vaso bin 6
    EXPECT_EQ(te.steps[2].r, p % 2 ? -1.0 : 1.0);
    EXPECT_EQ(te.vis[2], 50.0);
  }
  const auto start = start_distribution(tagged, 2);
  EXPECT_EQ(start.prob, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(flatten(tagged).size(), 12u);

  auto short_rewards = rewards;
  short_rewards.pop_back();
  EXPECT_THROW(tag_dataset(ds, model, ActionGrid::reference(), short_rewards), DataError);
  rewards[0].pop_back();
  EXPECT_THROW(tag_dataset(ds, model, ActionGrid::reference(), rewards), DataError);
}
