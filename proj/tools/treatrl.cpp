// Command-line driver: simulate | fit | bootstrap | evaluate | recommend | validate.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error,
// 3 numeric failure.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "treatrl/treatrl.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace treatrl;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
}

// Config files are user input: malformed ones are usage errors.
json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw UsageError("config file " + path + ": " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file " + path + " must hold a JSON object");
  return j;
}

LogFormat format_of(const std::string& path) { return fs::path(path).extension() == ".jsonl" ? LogFormat::Jsonl : LogFormat::Csv; }

Dataset read_dataset(const std::string& path, ParseMode mode = ParseMode::Strict) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  return parse_transition_log(in, format_of(path), mode);
}

class OutDir {
 public:
  explicit OutDir(const std::string& path) : dir_(path) {
    if (path.empty()) throw UsageError("--out is required");
    fs::create_directories(dir_);
  }

  void write(const std::string& name, const std::string& body) const {
    std::ofstream f(dir_ / name, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + (dir_ / name).string());
    f << body;
  }

  void write_json(const std::string& name, const json& j) const { write(name, j.dump(2) + "\n"); }

 private:
  fs::path dir_;
};

std::string hash_hex(const json& j) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
  return buf;
}

std::string num(double v) { return std::isnan(v) ? "" : detail::format_double(v); }
std::string num(std::optional<double> v) { return v ? num(*v) : ""; }

std::string quoted_bins(const std::vector<int>& bins) {
  std::string s = "\"";
  for (std::size_t i = 0; i < bins.size(); ++i) s += (i ? "," : "") + std::to_string(bins[i]);
  return s + "\"";
}

json nan_to_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

json seeds_of(const PipelineConfig& c) {
  return {{"master", c.seed}, {"state_space", c.state_seed()}, {"risk_split", c.split_seed()}, {"bootstrap", c.bootstrap_seed()}};
}

// Sidecar for a CSV report: enough provenance to regenerate the plot.
void write_meta(const OutDir& out, const std::string& report, const json& config, json extra) {
  extra["report"] = report + ".csv";
  extra["config_hash"] = hash_hex(config);
  out.write_json(report + ".meta.json", extra);
}

// Copies the listed keys of a config file over `base`.
json pick(const json& file, std::initializer_list<const char*> keys) {
  json j = json::object();
  for (const char* k : keys) {
    if (file.contains(k)) j[k] = file.at(k);
  }
  return j;
}

void apply_config(PipelineConfig& cfg, const json& layer) {
  try {
    from_json(layer, cfg);
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad configuration value: ") + e.what());
  }
}

template <typename T>
T layered(const json& file, const char* key, const CLI::Option* flag, const T& flag_value, T fallback) {
  try {
    if (file.contains(key)) fallback = file.at(key).get<T>();
  } catch (const json::exception& e) {
    throw UsageError(std::string("bad configuration value for ") + key + ": " + e.what());
  }
  if (flag && flag->count() > 0) fallback = flag_value;
  return fallback;
}

FittedBundle load_bundle(const std::string& path) {
  if (path.empty()) throw UsageError("--bundle is required");
  try {
    return bundle_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw DataError("bundle " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  std::string config, out;
  int patients = 0;
  int max_steps = 0;
  double confound = 0.0;
  bool observable = false;
  std::uint64_t seed = 0;
  std::string format = "csv";
  std::string scenario;
  CLI::Option *o_patients, *o_steps, *o_confound, *o_observable, *o_seed, *o_format, *o_scenario;
};

int run_simulate(const SimulateArgs& a) {
  const json file = read_config(a.config);
  SimConfig sc;
  sc.n_patients = layered(file, "patients", a.o_patients, a.patients, sc.n_patients);
  sc.max_steps = layered(file, "max_steps", a.o_steps, a.max_steps, sc.max_steps);
  sc.confound = layered(file, "confound", a.o_confound, a.confound, sc.confound);
  sc.observable = layered(file, "observable", a.o_observable, a.observable, sc.observable);
  sc.seed = layered(file, "seed", a.o_seed, a.seed, sc.seed);
  const std::string format = layered(file, "format", a.o_format, a.format, std::string("csv"));
  if (format != "csv" && format != "jsonl") throw UsageError("--format must be csv or jsonl");

  ScenarioConstants constants;
  if (a.o_scenario->count() > 0) {
    constants = load_scenario(a.scenario);
  } else if (file.contains("scenario")) {
    const auto& s = file.at("scenario");
    try {
      constants = s.is_string() ? load_scenario(s.get<std::string>()) : s.get<ScenarioConstants>();
    } catch (const json::exception& e) {
      throw UsageError(std::string("bad scenario in config: ") + e.what());
    }
  }
  sc.check();
  constants.check();

  const auto gt = build_ground_truth(sc, constants);
  const auto cohort = simulate_cohort(gt, sc);
  OutDir out(a.out);
  std::ostringstream log, truth;
  write_transition_log(log, cohort.data, format == "csv" ? LogFormat::Csv : LogFormat::Jsonl);
  write_truth(truth, cohort.truth);
  out.write(format == "csv" ? "cohort.csv" : "cohort.jsonl", log.str());
  out.write("truth.csv", truth.str());
  out.write_json("simulate.config.json", {{"command", "simulate"},
                                          {"patients", sc.n_patients},
                                          {"max_steps", sc.max_steps},
                                          {"confound", sc.confound},
                                          {"observable", sc.observable},
                                          {"seed", sc.seed},
                                          {"format", format},
                                          {"scenario", constants}});
  std::cout << "simulate: " << cohort.data.patient_count() << " patients, " << cohort.data.transition_count()
            << " transitions\n";
  return 0;
}

// --------------------------------------------------------------------- fit

struct FitArgs {
  std::string config, out, data, risk_data;
  std::string k_states, grid, projection, reward;
  int k_cca = 0, kmeans_restarts = 0, max_iter = 0;
  double gamma = 0.0, tol = 0.0;
  std::uint64_t seed = 0;
  CLI::Option *o_k_states, *o_grid, *o_projection, *o_reward, *o_k_cca, *o_restarts, *o_max_iter, *o_gamma, *o_tol,
      *o_seed, *o_risk_data, *o_data;
};

int run_fit(const FitArgs& a) {
  const json file = read_config(a.config);
  PipelineConfig cfg;
  apply_config(cfg, file);
  json flags = json::object();
  if (a.o_k_states->count()) {
    if (a.k_states == "auto") {
      flags["k_states"] = "auto";
    } else {
      try {
        std::size_t used = 0;
        const int k = std::stoi(a.k_states, &used);
        if (used != a.k_states.size()) throw std::invalid_argument("trailing characters");
        flags["k_states"] = k;
      } catch (const std::exception&) {
        throw UsageError("--k-states must be an integer or auto");
      }
    }
  }
  if (a.o_grid->count()) flags["grid"] = a.grid;
  if (a.o_projection->count()) flags["projection"] = a.projection;
  if (a.o_reward->count()) flags["reward"] = a.reward;
  if (a.o_k_cca->count()) flags["k_cca"] = a.k_cca;
  if (a.o_restarts->count()) flags["kmeans_restarts"] = a.kmeans_restarts;
  if (a.o_max_iter->count()) flags["max_iter"] = a.max_iter;
  if (a.o_gamma->count()) flags["gamma"] = a.gamma;
  if (a.o_tol->count()) flags["tol"] = a.tol;
  if (a.o_seed->count()) flags["seed"] = a.seed;
  apply_config(cfg, flags);
  cfg.check();

  const std::string data_path = layered(file, "data", a.o_data, a.data, std::string());
  const std::string risk_path = layered(file, "risk_data", a.o_risk_data, a.risk_data, std::string());
  if (data_path.empty()) throw UsageError("--data is required");
  if (cfg.reward == RewardMode::TerminalPlusIntermediate && risk_path.empty()) {
    throw UsageError("intermediate reward needs risk-model training data (--risk-data)");
  }
  const Dataset ds = read_dataset(data_path);
  std::optional<Dataset> risk_ds;
  if (cfg.reward == RewardMode::TerminalPlusIntermediate) risk_ds = read_dataset(risk_path);
  const FittedBundle b = fit_pipeline(ds, cfg, risk_ds ? &*risk_ds : nullptr);

  OutDir out(a.out);
  const json resolved = cfg;
  out.write_json("bundle.json", bundle_to_json(b));
  std::string aic = "k,rss,aic,chosen\n";
  for (const auto& p : b.state.aic) {
    aic += std::to_string(p.k) + ',' + num(p.rss) + ',' + num(p.aic) + ',' + (p.k == b.state.chosen_k ? "1" : "0") + '\n';
  }
  out.write("aic_curve.csv", aic);
  write_meta(out, "aic_curve", resolved,
             {{"selection", cfg.k_states ? "fixed" : "elbow"}, {"chosen_k", b.state.chosen_k},
              {"k_cca", cfg.k_cca}, {"seeds", seeds_of(cfg)}});
  if (b.risk_metrics) {
    out.write_json("risk_metrics.json", b.risk_metrics->to_json());
    std::string roc = "threshold,fpr,tpr\n", pr = "threshold,precision,recall\n";
    for (const auto& p : b.risk_metrics->roc) roc += num(p.threshold) + ',' + num(p.fpr) + ',' + num(p.tpr) + '\n';
    for (const auto& p : b.risk_metrics->pr) pr += num(p.threshold) + ',' + num(p.precision) + ',' + num(p.recall) + '\n';
    out.write("risk_roc.csv", roc);
    out.write("risk_pr.csv", pr);
  }
  json run = {{"command", "fit"}, {"data", data_path}, {"pipeline", resolved}};
  if (!risk_path.empty()) run["risk_data"] = risk_path;
  out.write_json("fit.config.json", run);
  std::cout << "fit: " << b.n_states() << " states, reward " << to_string(cfg.reward) << "\n";
  return 0;
}

// --------------------------------------------------------------- bootstrap

struct StageArgs {
  std::string config, out, data, bundle, ensemble, episodes, patient;
  int iterations = 0, threads = 1;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  CLI::Option *o_iterations = nullptr, *o_threads = nullptr, *o_alpha = nullptr, *o_seed = nullptr;
  CLI::Option *o_data = nullptr, *o_bundle = nullptr, *o_ensemble = nullptr, *o_episodes = nullptr;
};

// Bundle config, then the config file's stage keys, then flags.
PipelineConfig stage_config(const FittedBundle& b, const json& file, const StageArgs& a) {
  PipelineConfig cfg = b.config;
  apply_config(cfg, pick(file, {"iterations", "alpha", "seed"}));
  json flags = json::object();
  if (a.o_iterations && a.o_iterations->count()) flags["iterations"] = a.iterations;
  if (a.o_alpha && a.o_alpha->count()) flags["alpha"] = a.alpha;
  if (a.o_seed && a.o_seed->count()) flags["seed"] = a.seed;
  apply_config(cfg, flags);
  cfg.threads = layered(file, "threads", a.o_threads, a.threads, 1);
  cfg.check();
  return cfg;
}

std::string path_arg(const json& file, const char* key, const CLI::Option* flag, const std::string& value) {
  const auto p = layered(file, key, flag, value, std::string());
  if (p.empty()) throw UsageError(std::string("--") + key + " is required");
  return p;
}

int run_bootstrap(const StageArgs& a) {
  const json file = read_config(a.config);
  const std::string data_path = path_arg(file, "data", a.o_data, a.data);
  const std::string bundle_path = path_arg(file, "bundle", a.o_bundle, a.bundle);
  const FittedBundle b = load_bundle(bundle_path);
  const PipelineConfig cfg = stage_config(b, file, a);
  const Dataset ds = read_dataset(data_path);
  const auto tagged = tag_with_bundle(b, ds);
  const auto ens = bootstrap_ensemble(tagged, b.n_states(), kNumActions, cfg.bootstrap());

  OutDir out(a.out);
  const json resolved = cfg;
  out.write_json("ensemble.json", ensemble_to_json(ens));
  std::string csv = "state,action,fluid_bin,vaso_bin,status,p_value,ci_low,ci_high,q_point\n";
  int visited = 0;
  for (StateId s = 0; s < ens.n_states; ++s) {
    if (!ens.point.visited(s)) continue;
    ++visited;
    for (const auto& v : action_verdicts(ens, s, cfg.alpha)) {
      const auto bins = action_components(v.action);
      csv += std::to_string(s) + ',' + std::to_string(v.action) + ',' + std::to_string(bins.fluid_bin) + ',' +
             std::to_string(bins.vaso_bin) + ',' + to_string(v.status) + ',' + num(v.p_value) + ',' + num(v.ci_low) +
             ',' + num(v.ci_high) + ',' + num(v.q_point) + '\n';
    }
  }
  out.write("verdicts.csv", csv);
  write_meta(out, "verdicts", resolved,
             {{"alpha", cfg.alpha},
              {"bonferroni", "per state, m = observed actions - 1"},
              {"test", "one-sided Wilcoxon rank-sum, candidate below recommendation"},
              {"interval", "nearest-rank 0.5 and 99.5 replicate percentiles"},
              {"visited_states", visited},
              {"replicates_kept", ens.replicates.size()},
              {"replicates_discarded", ens.discarded},
              {"seeds", seeds_of(cfg)}});
  const auto rej = rejection_fraction(ens, tagged, cfg.alpha);
  out.write_json("rejection.json", {{"actions", rej.actions}, {"rejected", rej.rejected}, {"fraction", rej.fraction()},
                                    {"alpha", cfg.alpha}});
  out.write_json("bootstrap.config.json",
                 {{"command", "bootstrap"}, {"data", data_path}, {"bundle", bundle_path}, {"pipeline", resolved},
                  {"threads", cfg.threads}});
  std::cout << "bootstrap: " << ens.replicates.size() << " replicates, rejection fraction " << rej.fraction() << "\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

std::string histogram_rows(const std::string& policy, const LabelHistograms& h) {
  std::string s;
  for (int l = 0; l < kNumLabels; ++l) {
    const auto& lh = h[static_cast<std::size_t>(l)];
    const std::string label(to_string(static_cast<ClinicalLabel>(l)));
    for (int f = 0; f < kFluidBins; ++f) {
      s += policy + ',' + label + ",fluid," + std::to_string(f + 1) + ',' + num(lh.fluid[static_cast<std::size_t>(f)]) + ',' + num(lh.count) + '\n';
    }
    for (int v = 0; v < kVasoBins; ++v) {
      s += policy + ',' + label + ",vaso," + std::to_string(v + 1) + ',' + num(lh.vaso[static_cast<std::size_t>(v)]) + ',' + num(lh.count) + '\n';
    }
  }
  return s;
}

json homogeneity_json(const HomogeneityReport& r) {
  json states = json::array();
  for (const auto& s : r.top_states) {
    states.push_back({{"state", s.state}, {"prevalence", s.prevalence}, {"p_state_given_shock", s.p_given_shock},
                      {"median_vis_shock", s.median_shock}, {"median_vis_other", s.median_other}, {"gap", s.gap},
                      {"vis_shock", s.shock_vis}, {"vis_other", s.other_vis}});
  }
  return {{"variant", r.variant},
          {"median_gap", nan_to_null(r.median_gap)},
          {"note", r.note},
          {"p_state_given_shock", r.p_state_given_shock},
          {"p_state_given_other", r.p_state_given_other},
          {"top_states", states}};
}

int run_evaluate(const StageArgs& a) {
  const json file = read_config(a.config);
  const std::string data_path = path_arg(file, "data", a.o_data, a.data);
  const std::string bundle_path = path_arg(file, "bundle", a.o_bundle, a.bundle);
  const std::string ensemble_path = path_arg(file, "ensemble", a.o_ensemble, a.ensemble);
  const FittedBundle b = load_bundle(bundle_path);
  const PipelineConfig cfg = stage_config(b, file, a);
  const Dataset ds = read_dataset(data_path);
  const auto tagged = tag_with_bundle(b, ds);
  BootstrapEnsemble ens;
  try {
    ens = restore_ensemble(read_json_file(ensemble_path), tagged, b.q);
  } catch (const json::exception& e) {
    throw DataError("ensemble " + ensemble_path + ": " + e.what());
  }

  OutDir out(a.out);
  const json resolved = cfg;
  const json seeds = seeds_of(cfg);

  const std::vector<PolicyKind> kinds{PolicyKind::Greedy, PolicyKind::Behavior, PolicyKind::Random,
                                      PolicyKind::ZeroIntervention};
  const auto cmp = compare_policies(ens, kinds, cfg.solver(), cfg.alpha, cfg.threads);
  std::string pv = "policy,value,lo,hi,replicates\n";
  json names = json::array(), values = json::array(), p = json::array(), padj = json::array();
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    const auto& r = cmp.policies[i];
    pv += to_string(r.kind) + ',' + num(r.value) + ',' + num(r.lo) + ',' + num(r.hi) + ',' +
          std::to_string(r.replicate_values.size()) + '\n';
    names.push_back(to_string(r.kind));
    values.push_back(r.value);
    json row = json::array(), row_adj = json::array();
    for (std::size_t j = 0; j < kinds.size(); ++j) {
      row.push_back(nan_to_null(cmp.p[i][j]));
      row_adj.push_back(nan_to_null(cmp.p_adjusted[i][j]));
    }
    p.push_back(row);
    padj.push_back(row_adj);
  }
  out.write("policy_values.csv", pv);
  write_meta(out, "policy_values", resolved,
             {{"value", "sum over start states of start probability times policy-weighted q under that policy"},
              {"bounds", "nearest-rank replicate percentiles at alpha/2 and 1 - alpha/2"},
              {"alpha", cfg.alpha},
              {"replicates", ens.replicates.size()},
              {"seeds", seeds}});
  out.write_json("policy_comparison.json",
                 {{"policies", names},
                  {"values", values},
                  {"hypothesis", "row policy has higher value than column policy (one-sided rank-sum over replicates)"},
                  {"p", p},
                  {"p_adjusted", padj},
                  {"comparisons", cmp.comparisons},
                  {"alpha", cfg.alpha}});

  const auto curve = qvalue_mortality_curve(b.q, tagged);
  std::string qm = "bin,lo,hi,center,count,deaths,mortality,ci_low,ci_high\n";
  json edges = json::array();
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const auto& c = curve[i];
    qm += std::to_string(i) + ',' + num(c.lo) + ',' + num(c.hi) + ',' + num(c.center) + ',' + std::to_string(c.count) +
          ',' + std::to_string(c.deaths) + ',' + num(c.mortality) + ',' + num(c.ci_low) + ',' + num(c.ci_high) + '\n';
    edges.push_back(c.lo);
  }
  if (!curve.empty()) edges.push_back(curve.back().hi);
  out.write("qvalue_mortality.csv", qm);
  write_meta(out, "qvalue_mortality", resolved,
             {{"binning", "equal width over the observed q range"},
              {"bin_edges", edges},
              {"interval", "95% Wald, Agresti-Coull when n*p or n*(1-p) < 5"},
              {"spearman_center_vs_mortality", nan_to_null(mortality_trend(curve))},
              {"seeds", seeds}});

  const auto clinician = clinician_action_histograms(tagged);
  const auto ai = policy_action_histograms(greedy_policy(b.q), tagged);
  out.write("action_histograms.csv", "policy,label,margin,bin,mass,label_total\n" + histogram_rows("clinician", clinician) +
                                         histogram_rows("ai", ai));
  write_meta(out, "action_histograms", resolved,
             {{"reward", to_string(b.config.reward)},
              {"ai", "greedy policy action at every logged state occurrence"},
              {"fluid_bins", kFluidBins},
              {"vaso_bins", kVasoBins},
              {"seeds", seeds}});

  // raw-feature clustering with the same k for the homogeneity comparison
  auto raw_cfg = b.config.state_space();
  raw_cfg.projection = StateProjection::Standardized;
  raw_cfg.k_states = b.n_states();
  const auto raw_fit = fit_state_space(ds, b.grid, raw_cfg);
  const auto raw_tagged = tag_dataset(ds, raw_fit.model, b.grid, episode_rewards(ds, nullptr, RewardSpec{}));
  const auto cca_rep = state_homogeneity_report(b.config.projection == StateProjection::Cca ? "cca" : "fitted", tagged, b.n_states());
  const auto raw_rep = state_homogeneity_report("raw", raw_tagged, raw_fit.model.n_states());
  std::string sh = "variant,rank,state,prevalence,p_state_given_shock,n_shock,n_other,median_vis_shock,median_vis_other,gap\n";
  for (const auto* r : {&cca_rep, &raw_rep}) {
    for (std::size_t i = 0; i < r->top_states.size(); ++i) {
      const auto& s = r->top_states[i];
      sh += r->variant + ',' + std::to_string(i + 1) + ',' + std::to_string(s.state) + ',' + num(s.prevalence) + ',' +
            num(s.p_given_shock) + ',' + std::to_string(s.shock_vis.size()) + ',' + std::to_string(s.other_vis.size()) +
            ',' + num(s.median_shock) + ',' + num(s.median_other) + ',' + num(s.gap) + '\n';
    }
  }
  out.write("state_homogeneity.csv", sh);
  out.write_json("state_homogeneity.json", {{"variants", {homogeneity_json(cca_rep), homogeneity_json(raw_rep)}}});
  write_meta(out, "state_homogeneity", resolved,
             {{"ranking", "within-state share of septic-shock windows, states holding both groups"},
              {"top_k", 15},
              {"statistic", "mean absolute gap of median VIS, shock vs non-shock"},
              {"median_gap", {{cca_rep.variant, nan_to_null(cca_rep.median_gap)}, {"raw", nan_to_null(raw_rep.median_gap)}}},
              {"k", b.n_states()},
              {"seeds", seeds}});

  out.write_json("evaluate.config.json", {{"command", "evaluate"},
                                          {"data", data_path},
                                          {"bundle", bundle_path},
                                          {"ensemble", ensemble_path},
                                          {"pipeline", resolved},
                                          {"threads", cfg.threads}});
  std::cout << "evaluate: ai " << cmp.policies[0].value << ", clinician " << cmp.policies[1].value << ", random "
            << cmp.policies[2].value << ", zero " << cmp.policies[3].value << "\n";
  return 0;
}

// --------------------------------------------------------------- recommend

int run_recommend(const StageArgs& a) {
  const json file = read_config(a.config);
  const std::string bundle_path = path_arg(file, "bundle", a.o_bundle, a.bundle);
  const std::string ensemble_path = path_arg(file, "ensemble", a.o_ensemble, a.ensemble);
  const std::string episodes_path = path_arg(file, "episodes", a.o_episodes, a.episodes);
  const FittedBundle b = load_bundle(bundle_path);
  const PipelineConfig cfg = stage_config(b, file, a);
  BootstrapEnsemble ens;
  try {
    ens = load_ensemble_tables(read_json_file(ensemble_path), b.q);
  } catch (const json::exception& e) {
    throw DataError("ensemble " + ensemble_path + ": " + e.what());
  }
  // episodes in progress have no terminal row yet
  const Dataset ds = read_dataset(episodes_path, ParseMode::Lenient);
  if (ds.dim + kHistoryDim != b.state.model.feature_dim()) {
    throw DataError("episode features have dimension " + std::to_string(ds.dim) + ", the bundle expects " +
                    std::to_string(b.state.model.feature_dim() - kHistoryDim));
  }

  VerdictCache cache(ens, cfg.alpha);
  std::string csv =
      "patient_id,step_index,state,clinician_action,clinician_fluid_bin,clinician_vaso_bin,status,p_value,"
      "recommended_action,recommended_fluid_bin,recommended_vaso_bin,accepted_fluid_bins,accepted_vaso_bins";
  for (int f = 1; f <= kFluidBins; ++f) csv += ",min_p_fluid_" + std::to_string(f);
  for (int v = 1; v <= kVasoBins; ++v) csv += ",min_p_vaso_" + std::to_string(v);
  csv += '\n';
  std::size_t rows = 0, rejected = 0, unvisited = 0, episodes = 0;
  for (const auto& ep : ds.episodes) {
    if (!a.patient.empty() && ep.patient_id != a.patient) continue;
    ++episodes;
    std::vector<StateId> states;
    std::vector<ActionId> actions;
    for (std::size_t i = 0; i < ep.size(); ++i) {
      states.push_back(assign_state(b.state.model, build_feature_vector(ep, i)));
      actions.push_back(discretize_action(b.grid, ep.transitions[i].fluid_ml, ep.transitions[i].vis));
    }
    const auto report = episode_report(cache, ens, states, actions);
    for (std::size_t i = 0; i < report.size(); ++i) {
      const auto& r = report[i];
      const auto cb = action_components(r.clinician_action);
      csv += ep.patient_id + ',' + std::to_string(ep.transitions[i].step_index) + ',' + std::to_string(r.state) + ',' +
             std::to_string(r.clinician_action) + ',' + std::to_string(cb.fluid_bin) + ',' + std::to_string(cb.vaso_bin) + ',';
      if (!r.visited) {
        csv += "unvisited,,,,,\"\",\"\"";
        for (int k = 0; k < kFluidBins + kVasoBins; ++k) csv += ',';
        ++unvisited;
      } else {
        const auto rb = action_components(*r.recommended);
        csv += to_string(*r.status) + ',' + num(r.p_value) + ',' + std::to_string(*r.recommended) + ',' +
               std::to_string(rb.fluid_bin) + ',' + std::to_string(rb.vaso_bin) + ',' + quoted_bins(r.accepted_fluid_bins) +
               ',' + quoted_bins(r.accepted_vaso_bins);
        for (const auto& p : r.min_p_fluid) csv += ',' + num(p);
        for (const auto& p : r.min_p_vaso) csv += ',' + num(p);
        if (*r.status == VerdictStatus::Rejected) ++rejected;
      }
      csv += '\n';
      ++rows;
    }
  }
  if (!a.patient.empty() && episodes == 0) throw DataError("patient " + a.patient + " not found in " + episodes_path);

  OutDir out(a.out);
  const json resolved = cfg;
  out.write("episode_report.csv", csv);
  write_meta(out, "episode_report", resolved,
             {{"alpha", cfg.alpha},
              {"episodes", episodes},
              {"rows", rows},
              {"rejected", rejected},
              {"unvisited_rows", unvisited},
              {"margins", "a fluid (vaso) bin takes the best verdict over its paired vaso (fluid) bins"},
              {"seeds", seeds_of(cfg)}});
  json run = {{"command", "recommend"}, {"bundle", bundle_path}, {"ensemble", ensemble_path},
              {"episodes", episodes_path}, {"pipeline", resolved}};
  if (!a.patient.empty()) run["patient"] = a.patient;
  out.write_json("recommend.config.json", run);
  std::cout << "recommend: " << rows << " rows over " << episodes << " episodes\n";
  return 0;
}

// ---------------------------------------------------------------- validate

int run_validate(const StageArgs& a) {
  const json file = read_config(a.config);
  const std::string data_path = path_arg(file, "data", a.o_data, a.data);
  OutDir out(a.out);
  out.write_json("validate.config.json", {{"command", "validate"}, {"data", data_path}});
  try {
    const Dataset ds = read_dataset(data_path, ParseMode::Lenient);
    const auto rep = validate_dataset(ds);
    nlohmann::ordered_json j;
    j["file"] = data_path;
    j["ok"] = rep.ok();
    j["features"] = ds.dim;
    j.update(rep.to_json());
    out.write("validation.json", j.dump(2) + "\n");
    std::cout << "validate: " << rep.episode_count << " episodes, " << rep.transition_count << " transitions, "
              << rep.error_count() << " errors, " << rep.warning_count() << " warnings\n";
    return rep.ok() ? 0 : kExitData;
  } catch (const DataError& e) {
    nlohmann::ordered_json j;
    j["file"] = data_path;
    j["ok"] = false;
    j["parse_error"] = e.what();
    out.write("validation.json", j.dump(2) + "\n");
    throw;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline tabular RL for treatment policies: simulate, fit, bootstrap, evaluate, recommend, validate"};
  app.require_subcommand(1, 1);

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "generate a synthetic cohort with known ground truth");
  c_sim->add_option("--config", sim.config, "JSON config file");
  c_sim->add_option("--out", sim.out, "output directory")->required();
  sim.o_patients = c_sim->add_option("--patients", sim.patients, "number of patients");
  sim.o_steps = c_sim->add_option("--max-steps", sim.max_steps, "maximum logged windows per episode");
  sim.o_confound = c_sim->add_option("--confound", sim.confound, "severity-to-dose confound strength in [0, 1]");
  sim.o_observable = c_sim->add_flag("--observable", sim.observable, "emit the phenotype-separating features");
  sim.o_seed = c_sim->add_option("--seed", sim.seed, "random seed");
  sim.o_format = c_sim->add_option("--format", sim.format, "csv or jsonl");
  sim.o_scenario = c_sim->add_option("--scenario", sim.scenario, "scenario constants JSON");

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "fit action grid, state space, rewards, MDP and optimal Q");
  c_fit->add_option("--config", fit.config, "JSON config file");
  c_fit->add_option("--out", fit.out, "output directory")->required();
  fit.o_data = c_fit->add_option("--data", fit.data, "transition log (.csv or .jsonl)");
  fit.o_risk_data = c_fit->add_option("--risk-data", fit.risk_data, "risk-model training log (intermediate reward)");
  fit.o_k_states = c_fit->add_option("--k-states", fit.k_states, "number of states or auto");
  fit.o_k_cca = c_fit->add_option("--k-cca", fit.k_cca, "canonical correlates kept");
  fit.o_grid = c_fit->add_option("--grid", fit.grid, "reference or fit");
  fit.o_projection = c_fit->add_option("--projection", fit.projection, "cca or raw");
  fit.o_reward = c_fit->add_option("--reward", fit.reward, "terminal or intermediate");
  fit.o_restarts = c_fit->add_option("--kmeans-restarts", fit.kmeans_restarts, "k-means restarts");
  fit.o_gamma = c_fit->add_option("--gamma", fit.gamma, "discount factor");
  fit.o_tol = c_fit->add_option("--tol", fit.tol, "value iteration tolerance");
  fit.o_max_iter = c_fit->add_option("--max-iter", fit.max_iter, "value iteration cap");
  fit.o_seed = c_fit->add_option("--seed", fit.seed, "master seed");

  StageArgs boot, eval, rec, val;
  auto stage = [&app](const char* name, const char* help, StageArgs& s) {
    auto* c = app.add_subcommand(name, help);
    c->add_option("--config", s.config, "JSON config file");
    c->add_option("--out", s.out, "output directory")->required();
    return c;
  };
  auto* c_boot = stage("bootstrap", "bootstrap Q ensemble and per-state verdicts", boot);
  boot.o_data = c_boot->add_option("--data", boot.data, "transition log used by fit");
  boot.o_bundle = c_boot->add_option("--bundle", boot.bundle, "bundle.json from fit");
  boot.o_iterations = c_boot->add_option("--iterations", boot.iterations, "bootstrap replicates");
  boot.o_alpha = c_boot->add_option("--alpha", boot.alpha, "family-wise level");
  boot.o_seed = c_boot->add_option("--seed", boot.seed, "master seed");
  boot.o_threads = c_boot->add_option("--threads", boot.threads, "worker threads, 0 = all cores");

  auto* c_eval = stage("evaluate", "policy values, comparisons and figure reports", eval);
  eval.o_data = c_eval->add_option("--data", eval.data, "transition log used by fit");
  eval.o_bundle = c_eval->add_option("--bundle", eval.bundle, "bundle.json from fit");
  eval.o_ensemble = c_eval->add_option("--ensemble", eval.ensemble, "ensemble.json from bootstrap");
  eval.o_alpha = c_eval->add_option("--alpha", eval.alpha, "family-wise level");
  eval.o_threads = c_eval->add_option("--threads", eval.threads, "worker threads, 0 = all cores");

  auto* c_rec = stage("recommend", "per-window verdict report for episodes", rec);
  rec.o_bundle = c_rec->add_option("--bundle", rec.bundle, "bundle.json from fit");
  rec.o_ensemble = c_rec->add_option("--ensemble", rec.ensemble, "ensemble.json from bootstrap");
  rec.o_episodes = c_rec->add_option("--episodes", rec.episodes, "episodes to report (.csv or .jsonl)");
  c_rec->add_option("--patient", rec.patient, "only this patient");
  rec.o_alpha = c_rec->add_option("--alpha", rec.alpha, "family-wise level");

  auto* c_val = stage("validate", "check a transition log", val);
  val.o_data = c_val->add_option("--data", val.data, "transition log (.csv or .jsonl)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (c_sim->parsed()) return run_simulate(sim);
    if (c_fit->parsed()) return run_fit(fit);
    if (c_boot->parsed()) return run_bootstrap(boot);
    if (c_eval->parsed()) return run_evaluate(eval);
    if (c_rec->parsed()) return run_recommend(rec);
    if (c_val->parsed()) return run_validate(val);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
