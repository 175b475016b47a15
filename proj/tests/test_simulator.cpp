#include <gtest/gtest.h>

#include <sstream>

#include "treatrl/simulator.hpp"
#include "treatrl/stats.hpp"

using namespace treatrl;

namespace {

SimConfig sim(int n, double confound = 1.0, bool observable = false, std::uint64_t seed = 1) {
  SimConfig c;
  c.n_patients = n;
  c.confound = confound;
  c.observable = observable;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(GroundTruth, NoConfoundingGivesUniformBehavior) {
  const auto gt = build_ground_truth(sim(10, 0.0));
  for (const auto& row : gt.behavior) {
    for (double p : row) EXPECT_DOUBLE_EQ(p, 0.25);
  }
}

TEST(GroundTruth, RowsAreDistributions) {
  const auto gt = build_ground_truth(sim(10));
  double start = 0.0;
  for (int l = 0; l < kLatentStates; ++l) {
    start += gt.start[static_cast<std::size_t>(l)];
    double b = 0.0;
    for (int d = 0; d < kDoseLevels; ++d) {
      double s = 0.0;
      for (double p : gt.kernel[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)]) {
        EXPECT_GE(p, 0.0);
        s += p;
      }
      EXPECT_NEAR(s, 1.0, 1e-15);
      b += gt.behavior[static_cast<std::size_t>(l)][static_cast<std::size_t>(d)];
    }
    EXPECT_NEAR(b, 1.0, 1e-15);
  }
  EXPECT_NEAR(start, 1.0, 1e-15);
}

TEST(GroundTruth, DoseActionMapping) {
  const auto gt = build_ground_truth(sim(10));
  for (int d = 0; d < kDoseLevels; ++d) EXPECT_EQ(gt.dose_of(gt.action_of(d)), d);
  EXPECT_EQ(gt.action_of(0), 0);
  EXPECT_FALSE(gt.dose_of(1).has_value());
  EXPECT_EQ(gt.feature_dim(), 12 + 8 + 16);
  EXPECT_EQ(build_ground_truth(sim(10, 1.0, true)).feature_dim(), 12 + 24 + 8 + 16);
}

TEST(Oracle, SickPatientsNeedTheHighestDose) {
  const auto gt = build_ground_truth(sim(10));
  const auto o = oracle_solution(gt, 0.99);
  for (int sev = 0; sev < kSeverities; ++sev) {
    EXPECT_EQ(o.optimal_dose[static_cast<std::size_t>(latent_id(1, sev))], 3);
    EXPECT_EQ(o.optimal_dose[static_cast<std::size_t>(latent_id(0, sev))], 0);
    // the sick phenotype dies more often under the logging policy
    EXPECT_GT(o.behavior_death_prob[static_cast<std::size_t>(latent_id(1, sev))],
              o.behavior_death_prob[static_cast<std::size_t>(latent_id(0, sev))]);
  }
  for (int l = 0; l < kLatentStates; ++l) {
    EXPECT_LE(o.behavior_value[static_cast<std::size_t>(l)], o.optimal_value[static_cast<std::size_t>(l)] + 1e-12);
    EXPECT_NEAR(o.optimal_value[static_cast<std::size_t>(l)],
                o.q[static_cast<std::size_t>(l)][static_cast<std::size_t>(o.optimal_dose[static_cast<std::size_t>(l)])], 1e-12);
  }
  EXPECT_LT(o.start_behavior_value, o.start_optimal_value);
}

TEST(Cohort, EpisodesTerminateAndTruthAligns) {
  const auto gt = build_ground_truth(sim(100));
  const auto c = simulate_cohort(gt, sim(100));
  ASSERT_EQ(c.data.episodes.size(), 100u);
  EXPECT_EQ(c.truth.size(), c.data.transition_count());
  std::size_t k = 0;
  for (const auto& ep : c.data.episodes) {
    EXPECT_TRUE(ep.outcome().has_value());
    EXPECT_LE(ep.size(), 40u);
    for (const auto& t : ep.transitions) {
      EXPECT_EQ(c.truth[k].patient_id, t.patient_id);
      EXPECT_EQ(c.truth[k].step_index, t.step_index);
      EXPECT_TRUE(gt.dose_of(discretize_action(ActionGrid::reference(), t.fluid_ml, t.vis)).has_value());
      ++k;
    }
  }
  EXPECT_EQ(c.data.episodes.front().patient_id, "p00000");
  std::ostringstream os;
  write_truth(os, c.truth);
  EXPECT_EQ(os.str().substr(0, 36), "patient_id,step_index,latent_state\np");
}

TEST(Cohort, LoggedDoseTracksSeverity) {
  const auto gt = build_ground_truth(sim(500));
  const auto c = simulate_cohort(gt, sim(500));
  std::vector<double> sev, dose;
  std::size_t k = 0;
  for (const auto& ep : c.data.episodes) {
    for (const auto& t : ep.transitions) {
      sev.push_back(latent_severity(c.truth[k].latent_state) + kSeverities * latent_phenotype(c.truth[k].latent_state));
      dose.push_back(*gt.dose_of(discretize_action(ActionGrid::reference(), t.fluid_ml, t.vis)));
      ++k;
    }
  }
  EXPECT_GT(spearman(sev, dose), 0.5);
}

TEST(Cohort, DeterministicPerSeed) {
  const auto gt = build_ground_truth(sim(50));
  const auto a = simulate_cohort(gt, sim(50)), b = simulate_cohort(gt, sim(50));
  EXPECT_EQ(a.data, b.data);
  EXPECT_NE(a.data, simulate_cohort(gt, sim(50, 1.0, false, 2)).data);
}

TEST(Cohort, TruncatedEpisodesKeepTheirOutcome) {
  SimConfig cfg = sim(200);
  cfg.max_steps = 1;
  const auto c = simulate_cohort(build_ground_truth(cfg), cfg);
  for (const auto& ep : c.data.episodes) {
    EXPECT_EQ(ep.size(), 1u);
    EXPECT_TRUE(ep.outcome().has_value());
  }
}

TEST(Cohort, MortalityConvergesToTheLatentRate) {
  const auto gt = build_ground_truth(sim(10));
  const auto o = oracle_solution(gt, 0.99);
  double expected = 0.0;
  for (int l = 0; l < kLatentStates; ++l) expected += gt.start[static_cast<std::size_t>(l)] * o.behavior_death_prob[static_cast<std::size_t>(l)];
  for (int n : {500, 5000}) {
    const auto c = simulate_cohort(gt, sim(n));
    double deaths = 0.0;
    for (const auto& ep : c.data.episodes) deaths += *ep.outcome() == Outcome::Death;
    const double rate = deaths / n;
    // four standard errors
    EXPECT_NEAR(rate, expected, 4.0 * std::sqrt(expected * (1 - expected) / n)) << n;
  }
}

TEST(Scenario, ShippedFileMatchesDefaults) {
  const auto loaded = load_scenario(TREATRL_SOURCE_DIR "/config/default_scenario.json");
  EXPECT_EQ(nlohmann::json(loaded).dump(), nlohmann::json(ScenarioConstants{}).dump());
}

TEST(Scenario, InvalidConstantsAreRejected) {
  ScenarioConstants c;
  c.moves[0][0] = {0.5, 0.5, 0.5};
  EXPECT_THROW(build_ground_truth(sim(10), c), std::invalid_argument);
  EXPECT_THROW(build_ground_truth(sim(10, 1.5)), std::invalid_argument);
  EXPECT_THROW(build_ground_truth(sim(0)), std::invalid_argument);
}
