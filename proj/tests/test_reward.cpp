#include <gtest/gtest.h>

#include <random>

#include "treatrl/reward.hpp"

using namespace treatrl;

namespace {

// Risk equal to the first physiological feature.
class FirstFeatureRisk final : public RiskModel {
 public:
  explicit FirstFeatureRisk(std::size_t dim) : dim_(dim) {}
  double score(std::span<const double> x) const override { return x[0]; }
  std::size_t input_dim() const override { return dim_; }
  std::string kind() const override { return "first_feature"; }
  nlohmann::json to_json() const override { return {{"kind", kind()}}; }

 private:
  std::size_t dim_;
};

Episode episode_with_risks(const std::vector<double>& risks, Terminal end) {
  Episode ep;
  ep.patient_id = "r";
  for (std::size_t i = 0; i < risks.size(); ++i) {
    Transition t;
    t.patient_id = "r";
    t.step_index = static_cast<int>(i);
    t.features = {risks[i], 0.0};
    ep.transitions.push_back(t);
  }
  ep.transitions.back().terminal = end;
  return ep;
}

// Death iff every feature-0 value of the episode is positive.
Dataset separable(int patients, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Episode> eps;
  for (int p = 0; p < patients; ++p) {
    const bool dies = p % 3 == 0;
    Episode ep;
    ep.patient_id = "s" + std::to_string(10000 + p);
    for (int s = 0; s < 5; ++s) {
      Transition t;
      t.patient_id = ep.patient_id;
      t.step_index = s;
      t.features = {(dies ? 1.0 : -1.0) * (0.2 + std::abs(g(rng))), g(rng), g(rng)};
      t.fluid_ml = 100.0 * std::abs(g(rng));
      ep.transitions.push_back(t);
    }
    ep.transitions.back().terminal = dies ? Terminal::Death : Terminal::Discharge;
    eps.push_back(ep);
  }
  return Dataset::from_episodes(eps, 3);
}

// AUC as U / (n+ n-) by direct pair counting.
double mann_whitney_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double u = 0.0, np = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) (y[i] ? np : nn) += 1.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      u += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return u / (np * nn);
}

}  // namespace

TEST(Rewards, TerminalValues) {
  const FirstFeatureRisk risk(2 + kHistoryDim);
  const auto died = compute_rewards(episode_with_risks({0.5, 0.6}, Terminal::Death), nullptr, RewardSpec{});
  EXPECT_EQ(died, (std::vector<double>{0.0, -1.0}));
  const auto lived = compute_rewards(episode_with_risks({0.5, 0.6}, Terminal::Discharge), nullptr, RewardSpec{});
  EXPECT_EQ(lived.back(), 1.0);
  RewardSpec inter{RewardMode::TerminalPlusIntermediate};
  EXPECT_EQ(compute_rewards(episode_with_risks({0.9, 0.1}, Terminal::Death), &risk, inter).back(), -1.0);
}

TEST(Rewards, DecreasingRiskIsRewarded) {
  const FirstFeatureRisk risk(2 + kHistoryDim);
  const auto r = compute_rewards(episode_with_risks({0.4, 0.3, 0.3}, Terminal::Discharge), &risk,
                                 RewardSpec{RewardMode::TerminalPlusIntermediate});
  EXPECT_NEAR(r[0], 0.1, 1e-15);
  EXPECT_EQ(r[1], 0.0);
  EXPECT_EQ(r[2], 1.0);
}

TEST(Rewards, IntermediateNeedsAModel) {
  EXPECT_THROW(compute_rewards(episode_with_risks({0.4, 0.3}, Terminal::Death), nullptr,
                               RewardSpec{RewardMode::TerminalPlusIntermediate}),
               std::invalid_argument);
}

TEST(Rewards, IntermediateRewardsTelescope) {
  const FirstFeatureRisk risk(2 + kHistoryDim);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> risks(2 + rep % 17);
    for (auto& v : risks) v = u(rng);
    const auto r = compute_rewards(episode_with_risks(risks, Terminal::Discharge), &risk,
                                   RewardSpec{RewardMode::TerminalPlusIntermediate});
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < r.size(); ++i) sum += r[i];
    // windows 0..n-2 telescope to risk(0) - risk(n-1)
    EXPECT_NEAR(sum, risks.front() - risks.back(), 1e-12);
  }
}

TEST(RiskModel, SeparableCohort) {
  const auto ds = separable(300, 4);
  const auto model = fit_risk_model(ds);
  const auto m = evaluate_risk_model(model, ds);
  EXPECT_GT(m.auc, 0.99);
  std::vector<double> deep_death(3 + kHistoryDim, 0.0), deep_life(3 + kHistoryDim, 0.0);
  deep_death[0] = 4.0;
  deep_life[0] = -4.0;
  EXPECT_GT(risk_score(model, deep_death), 0.9);
  EXPECT_LT(risk_score(model, deep_life), 0.1);
  EXPECT_GT(model.feature_importances()[0], 0.5);
}

TEST(RiskModel, ScoresAreProbabilities) {
  const auto ds = separable(90, 5);
  const auto model = fit_risk_model(ds);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 50.0);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> x(3 + kHistoryDim);
    for (auto& v : x) v = g(rng);
    const double s = model.score(x);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
  EXPECT_THROW(model.score(std::vector<double>(3, 0.0)), DataError);
}

TEST(RiskModel, SingleClassIsAnError) {
  auto ds = separable(30, 6);
  for (auto& ep : ds.episodes) ep.transitions.back().terminal = Terminal::Discharge;
  EXPECT_THROW(fit_risk_model(ds), DataError);
  const auto model = fit_risk_model(separable(30, 6));
  EXPECT_THROW(evaluate_risk_model(model, ds), DataError);
}

TEST(RiskModel, JsonRoundTripScoresIdentically) {
  const auto ds = separable(60, 7);
  const auto model = fit_risk_model(ds);
  const auto back = risk_model_from_json(model.to_json());
  for (const auto& ep : ds.episodes) {
    for (std::size_t i = 0; i < ep.size(); ++i) {
      const auto x = build_feature_vector(ep, i);
      EXPECT_EQ(back->score(x), model.score(x));
    }
  }
}

TEST(Metrics, AucMatchesMannWhitney) {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<int> coarse(0, 20);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const int n = 20 + rep * 3;
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      y[static_cast<std::size_t>(i)] = i % 4 == 0 || (i % 7 == 1);
      // half the sets use coarse scores so that ties occur
      const double base = rep % 2 ? coarse(rng) / 4.0 : g(rng);
      s[static_cast<std::size_t>(i)] = base + 0.7 * y[static_cast<std::size_t>(i)];
    }
    EXPECT_NEAR(evaluate_scores(s, y).auc, mann_whitney_auc(s, y), 1e-12);
  }
}

TEST(Metrics, PerfectAndUninformativeScores) {
  const std::vector<double> s{0.9, 0.8, 0.7, 0.2, 0.1};
  const std::vector<int> y{1, 1, 1, 0, 0};
  EXPECT_DOUBLE_EQ(evaluate_scores(s, y).auc, 1.0);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> rs(20000);
  std::vector<int> ry(20000);
  for (std::size_t i = 0; i < rs.size(); ++i) {
    rs[i] = u(rng);
    ry[i] = u(rng) < 0.3;
  }
  EXPECT_NEAR(evaluate_scores(rs, ry).auc, 0.5, 0.05);
}

TEST(Metrics, OperatingPointClosestToTopLeft) {
  const std::vector<double> s{0.9, 0.8, 0.6, 0.55, 0.4, 0.3, 0.2, 0.1};
  const std::vector<int> y{1, 1, 0, 1, 0, 1, 0, 0};
  const auto m = evaluate_scores(s, y);
  // cuts: >=0.8 gives (fpr 0, tpr .5) d=.5; >=0.55 gives (.25,.75) d=.354;
  // >=0.3 gives (.5, 1) d=.5
  EXPECT_EQ(m.threshold, 0.55);
  EXPECT_DOUBLE_EQ(m.sensitivity, 0.75);
  EXPECT_DOUBLE_EQ(m.specificity, 0.75);
  EXPECT_DOUBLE_EQ(m.ppv, 0.75);
  EXPECT_DOUBLE_EQ(m.accuracy, 0.75);
  EXPECT_EQ(m.roc.size(), 9u);
  EXPECT_EQ(m.pr.size(), 8u);
  EXPECT_EQ(m.roc.back().fpr, 1.0);
  EXPECT_EQ(m.roc.back().tpr, 1.0);
}
