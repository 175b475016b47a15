#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dataset.hpp"
#include "error.hpp"
#include "risk_model.hpp"
#include "state_space.hpp"

namespace treatrl {

enum class RewardMode { TerminalOnly, TerminalPlusIntermediate };

inline std::string to_string(RewardMode m) {
  return m == RewardMode::TerminalOnly ? "terminal" : "intermediate";
}

struct RewardSpec {
  RewardMode mode = RewardMode::TerminalOnly;
  double discharge_reward = 1.0;
  double death_reward = -1.0;
};

// Per-transition labels inherit the episode outcome: every window of a patient
// who dies is a positive example.
inline BoostedTreesRisk fit_risk_model(const Dataset& train, const BoostingParams& params = {}) {
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  x.reserve(train.transition_count());
  for (const auto& ep : train.episodes) {
    const auto out = ep.outcome();
    if (!out) throw DataError("episode " + ep.patient_id + " has no outcome");
    for (std::size_t i = 0; i < ep.size(); ++i) {
      x.push_back(build_feature_vector(ep, i));
      y.push_back(*out == Outcome::Death ? 1 : 0);
    }
  }
  return BoostedTreesRisk::fit(x, y, params);
}

inline double risk_score(const RiskModel& model, std::span<const double> x) { return model.score(x); }

// Terminal windows yield +1 / -1. In intermediate mode every other window t
// yields -(risk(x_{t+1}) - risk(x_t)); in terminal-only mode it yields 0.
inline std::vector<double> compute_rewards(const Episode& episode, const RiskModel* model, const RewardSpec& spec) {
  if (spec.mode == RewardMode::TerminalPlusIntermediate && model == nullptr) {
    throw std::invalid_argument("intermediate reward requires a risk model");
  }
  std::vector<double> rewards(episode.size(), 0.0);
  std::vector<double> risk;
  if (spec.mode == RewardMode::TerminalPlusIntermediate) {
    risk.reserve(episode.size());
    for (std::size_t i = 0; i < episode.size(); ++i) risk.push_back(model->score(build_feature_vector(episode, i)));
  }
  for (std::size_t i = 0; i < episode.size(); ++i) {
    switch (episode.transitions[i].terminal) {
      case Terminal::Discharge: rewards[i] = spec.discharge_reward; break;
      case Terminal::Death: rewards[i] = spec.death_reward; break;
      case Terminal::None:
        if (spec.mode == RewardMode::TerminalPlusIntermediate && i + 1 < episode.size()) {
          rewards[i] = -(risk[i + 1] - risk[i]);
        }
        break;
    }
  }
  return rewards;
}

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct RiskMetrics {
  double auc = 0.0;
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double ppv = 0.0;
  double threshold = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  std::vector<RocPoint> roc;
  std::vector<PrPoint> pr;

  nlohmann::ordered_json to_json() const {
    return {{"auc", auc},         {"accuracy", accuracy}, {"sensitivity", sensitivity},
            {"specificity", specificity}, {"ppv", ppv},   {"threshold", threshold},
            {"positives", positives},     {"negatives", negatives}};
  }
};

// ROC over every distinct score used as a ">= threshold" cut, AUC by the
// trapezoid rule, operating point closest to (FPR 0, TPR 1).
inline RiskMetrics evaluate_scores(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  RiskMetrics m;
  for (int l : labels) (l == 1 ? m.positives : m.negatives)++;
  if (m.positives == 0 || m.negatives == 0) throw DataError("risk evaluation needs both outcome classes");

  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  const double np = static_cast<double>(m.positives), nn = static_cast<double>(m.negatives);
  m.roc.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    while (i < order.size() && scores[order[i]] == thr) {
      (labels[order[i]] == 1 ? tp : fp)++;
      ++i;
    }
    const double tpr = static_cast<double>(tp) / np, fpr = static_cast<double>(fp) / nn;
    const auto& prev = m.roc.back();
    m.auc += (fpr - prev.fpr) * (tpr + prev.tpr) / 2.0;
    m.roc.push_back({thr, fpr, tpr});
    m.pr.push_back({thr, static_cast<double>(tp) / static_cast<double>(tp + fp), tpr});
    const double dist = std::hypot(fpr, 1.0 - tpr);
    if (dist < best_dist) {
      best_dist = dist;
      m.threshold = thr;
      m.sensitivity = tpr;
      m.specificity = 1.0 - fpr;
      m.ppv = static_cast<double>(tp) / static_cast<double>(tp + fp);
      m.accuracy = (static_cast<double>(tp) + (nn - static_cast<double>(fp))) / (np + nn);
    }
  }
  return m;
}

inline RiskMetrics evaluate_risk_model(const RiskModel& model, const Dataset& test) {
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& ep : test.episodes) {
    const auto out = ep.outcome();
    if (!out) throw DataError("episode " + ep.patient_id + " has no outcome");
    for (std::size_t i = 0; i < ep.size(); ++i) {
      scores.push_back(model.score(build_feature_vector(ep, i)));
      labels.push_back(*out == Outcome::Death ? 1 : 0);
    }
  }
  return evaluate_scores(scores, labels);
}

}  // namespace treatrl
