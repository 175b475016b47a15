#pragma once

// Episodic treatment logs: one row per clinician decision window, grouped into
// per-patient episodes that end in discharge or death.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace treatrl {

enum class ClinicalLabel { NonSepsis = 0, Sepsis = 1, SepticShock = 2 };
enum class Terminal { None, Discharge, Death };
enum class Outcome { Discharge, Death };
enum class LogFormat { Csv, Jsonl };

inline constexpr int kNumLabels = 3;

inline std::string_view to_string(ClinicalLabel l) {
  switch (l) {
    case ClinicalLabel::NonSepsis: return "non_sepsis";
    case ClinicalLabel::Sepsis: return "sepsis";
    case ClinicalLabel::SepticShock: return "septic_shock";
  }
  return "non_sepsis";
}

inline std::string_view to_string(Terminal t) {
  switch (t) {
    case Terminal::None: return "none";
    case Terminal::Discharge: return "discharge";
    case Terminal::Death: return "death";
  }
  return "none";
}

inline std::optional<ClinicalLabel> parse_label(std::string_view s) {
  if (s.empty() || s == "non_sepsis") return ClinicalLabel::NonSepsis;
  if (s == "sepsis") return ClinicalLabel::Sepsis;
  if (s == "septic_shock") return ClinicalLabel::SepticShock;
  return std::nullopt;
}

inline std::optional<Terminal> parse_terminal(std::string_view s) {
  if (s == "none") return Terminal::None;
  if (s == "discharge") return Terminal::Discharge;
  if (s == "death") return Terminal::Death;
  return std::nullopt;
}

// One 4-hour decision window. `vis` is the precomputed maximum
// vasoactive-inotropic score over the window.
struct Transition {
  std::string patient_id;
  int step_index = 0;
  std::vector<double> features;
  double fluid_ml = 0.0;
  double vis = 0.0;
  ClinicalLabel clinical_label = ClinicalLabel::NonSepsis;
  Terminal terminal = Terminal::None;

  bool operator==(const Transition&) const = default;
};

struct Episode {
  std::string patient_id;
  std::vector<Transition> transitions;

  // Outcome from the final row; empty if the episode is unterminated.
  std::optional<Outcome> outcome() const {
    if (transitions.empty()) return std::nullopt;
    switch (transitions.back().terminal) {
      case Terminal::Discharge: return Outcome::Discharge;
      case Terminal::Death: return Outcome::Death;
      case Terminal::None: return std::nullopt;
    }
    return std::nullopt;
  }

  std::size_t size() const { return transitions.size(); }
  bool operator==(const Episode&) const = default;
};

// Patient-keyed collection; episodes are kept sorted by patient_id so that two
// datasets with the same content compare equal regardless of input row order.
struct Dataset {
  std::vector<Episode> episodes;
  std::size_t dim = 0;
  std::vector<std::string> feature_names;

  static std::vector<std::string> default_feature_names(std::size_t d) {
    std::vector<std::string> names;
    names.reserve(d);
    for (std::size_t i = 0; i < d; ++i) names.push_back("f_" + std::to_string(i));
    return names;
  }

  static Dataset from_episodes(std::vector<Episode> eps, std::size_t d) {
    std::sort(eps.begin(), eps.end(),
              [](const Episode& a, const Episode& b) { return a.patient_id < b.patient_id; });
    Dataset ds;
    ds.episodes = std::move(eps);
    ds.dim = d;
    ds.feature_names = default_feature_names(d);
    return ds;
  }

  std::size_t patient_count() const { return episodes.size(); }

  std::size_t transition_count() const {
    std::size_t n = 0;
    for (const auto& e : episodes) n += e.size();
    return n;
  }

  const Episode* find(std::string_view id) const {
    auto it = std::lower_bound(episodes.begin(), episodes.end(), id,
                               [](const Episode& e, std::string_view v) { return e.patient_id < v; });
    return (it != episodes.end() && it->patient_id == id) ? &*it : nullptr;
  }

  bool operator==(const Dataset&) const = default;
};

namespace detail {

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
  long long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

[[noreturn]] inline void row_error(std::size_t line_no, const std::string& msg) {
  throw DataError("line " + std::to_string(line_no) + ": " + msg);
}

struct RawRow {
  Transition t;
  std::size_t line_no = 0;
};

}  // namespace detail

// Strict parsing enforces every Transition/Episode invariant. Lenient parsing
// keeps semantically invalid rows (NaN features, misplaced or missing terminal
// flags, negative doses) so that validate_dataset can report them.
enum class ParseMode { Strict, Lenient };

namespace detail {

inline Dataset assemble(std::vector<RawRow> rows, std::size_t d, ParseMode mode) {
  std::map<std::string, std::vector<RawRow>> by_patient;
  for (auto& r : rows) by_patient[r.t.patient_id].push_back(std::move(r));

  std::vector<Episode> episodes;
  episodes.reserve(by_patient.size());
  for (auto& [id, prow] : by_patient) {
    std::stable_sort(prow.begin(), prow.end(),
                     [](const RawRow& a, const RawRow& b) { return a.t.step_index < b.t.step_index; });
    for (std::size_t i = 1; i < prow.size(); ++i) {
      if (prow[i].t.step_index == prow[i - 1].t.step_index) {
        row_error(prow[i].line_no, "duplicate (patient_id, step_index) = (" + id + ", " +
                                       std::to_string(prow[i].t.step_index) + ")");
      }
    }
    if (mode == ParseMode::Strict) {
      for (std::size_t i = 0; i + 1 < prow.size(); ++i) {
        if (prow[i].t.terminal != Terminal::None) {
          row_error(prow[i].line_no, "terminal before end of episode for patient " + id);
        }
      }
      if (prow.back().t.terminal == Terminal::None) {
        throw DataError("episode for patient " + id + " has no terminal row (discharge or death)");
      }
    }
    Episode ep;
    ep.patient_id = id;
    for (auto& r : prow) ep.transitions.push_back(std::move(r.t));
    episodes.push_back(std::move(ep));
  }
  return Dataset::from_episodes(std::move(episodes), d);
}

inline void check_row_values(const Transition& t, std::size_t line_no, ParseMode mode) {
  if (mode == ParseMode::Lenient) return;
  if (!(t.fluid_ml >= 0.0) || !std::isfinite(t.fluid_ml)) row_error(line_no, "fluid_ml must be finite and >= 0");
  if (!(t.vis >= 0.0) || !std::isfinite(t.vis)) row_error(line_no, "vis must be finite and >= 0");
  if (t.step_index < 0) row_error(line_no, "step_index must be nonnegative");
  for (std::size_t j = 0; j < t.features.size(); ++j) {
    if (std::isnan(t.features[j])) row_error(line_no, "missing (NaN) value in feature f_" + std::to_string(j));
  }
}

inline Dataset parse_csv(std::istream& in, ParseMode mode) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty input: CSV header required");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  static const char* fixed[] = {"patient_id", "step_index", "terminal", "clinical_label", "fluid_ml", "vis"};
  if (header.size() < 7) row_error(1, "header must list the six fixed columns and at least one feature f_0");
  for (std::size_t i = 0; i < 6; ++i) {
    if (header[i] != fixed[i]) row_error(1, "expected header column '" + std::string(fixed[i]) + "'");
  }
  const std::size_t d = header.size() - 6;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[6 + j] != "f_" + std::to_string(j)) row_error(1, "expected header column 'f_" + std::to_string(j) + "'");
  }

  std::vector<RawRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      row_error(line_no, "feature dimension mismatch: expected " + std::to_string(d) + " features, got " +
                             std::to_string(cells.size() >= 6 ? cells.size() - 6 : 0));
    }
    RawRow r;
    r.line_no = line_no;
    r.t.patient_id = std::string(cells[0]);
    if (r.t.patient_id.empty()) row_error(line_no, "empty patient_id");
    auto step = parse_int(cells[1]);
    if (!step) row_error(line_no, "malformed step_index '" + std::string(cells[1]) + "'");
    r.t.step_index = static_cast<int>(*step);
    auto term = parse_terminal(cells[2]);
    if (!term) row_error(line_no, "unknown terminal '" + std::string(cells[2]) + "'");
    r.t.terminal = *term;
    auto label = parse_label(cells[3]);
    if (!label) row_error(line_no, "unknown clinical_label '" + std::string(cells[3]) + "'");
    r.t.clinical_label = *label;
    auto fluid = parse_double(cells[4]);
    auto vis = parse_double(cells[5]);
    if (!fluid) row_error(line_no, "malformed fluid_ml");
    if (!vis) row_error(line_no, "malformed vis");
    r.t.fluid_ml = *fluid;
    r.t.vis = *vis;
    r.t.features.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
      auto v = parse_double(cells[6 + j]);
      if (!v) row_error(line_no, "malformed value for f_" + std::to_string(j));
      r.t.features[j] = *v;
    }
    check_row_values(r.t, line_no, mode);
    rows.push_back(std::move(r));
  }
  return assemble(std::move(rows), d, mode);
}

inline Dataset parse_jsonl(std::istream& in, ParseMode mode) {
  std::vector<RawRow> rows;
  std::optional<std::size_t> d;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      row_error(line_no, std::string("malformed JSON: ") + e.what());
    }
    RawRow r;
    r.line_no = line_no;
    try {
      r.t.patient_id = obj.at("patient_id").get<std::string>();
      r.t.step_index = obj.at("step_index").get<int>();
      auto term = parse_terminal(obj.at("terminal").get<std::string>());
      if (!term) row_error(line_no, "unknown terminal");
      r.t.terminal = *term;
      std::string label = obj.contains("clinical_label") ? obj["clinical_label"].get<std::string>() : "";
      auto lab = parse_label(label);
      if (!lab) row_error(line_no, "unknown clinical_label '" + label + "'");
      r.t.clinical_label = *lab;
      r.t.fluid_ml = obj.at("fluid_ml").get<double>();
      r.t.vis = obj.at("vis").get<double>();
      for (const auto& v : obj.at("features")) {
        r.t.features.push_back(v.is_null() ? std::nan("") : v.get<double>());
      }
    } catch (const nlohmann::json::exception& e) {
      row_error(line_no, std::string("malformed row: ") + e.what());
    }
    if (!d) d = r.t.features.size();
    if (r.t.features.size() != *d || *d == 0) {
      row_error(line_no, "feature dimension mismatch: expected " + std::to_string(*d) + " features, got " +
                             std::to_string(r.t.features.size()));
    }
    check_row_values(r.t, line_no, mode);
    rows.push_back(std::move(r));
  }
  return assemble(std::move(rows), d.value_or(0), mode);
}

}  // namespace detail

inline Dataset parse_transition_log(std::istream& in, LogFormat format, ParseMode mode = ParseMode::Strict) {
  return format == LogFormat::Csv ? detail::parse_csv(in, mode) : detail::parse_jsonl(in, mode);
}

inline Dataset parse_transition_log(const std::string& text, LogFormat format, ParseMode mode = ParseMode::Strict) {
  std::istringstream in(text);
  return parse_transition_log(in, format, mode);
}

inline void write_transition_log(std::ostream& out, const Dataset& ds, LogFormat format) {
  if (format == LogFormat::Csv) {
    out << "patient_id,step_index,terminal,clinical_label,fluid_ml,vis";
    for (std::size_t j = 0; j < ds.dim; ++j) out << ",f_" << j;
    out << '\n';
    for (const auto& ep : ds.episodes) {
      for (const auto& t : ep.transitions) {
        out << t.patient_id << ',' << t.step_index << ',' << to_string(t.terminal) << ','
            << to_string(t.clinical_label) << ',' << detail::format_double(t.fluid_ml) << ','
            << detail::format_double(t.vis);
        for (double v : t.features) out << ',' << detail::format_double(v);
        out << '\n';
      }
    }
    return;
  }
  for (const auto& ep : ds.episodes) {
    for (const auto& t : ep.transitions) {
      nlohmann::ordered_json obj;
      obj["patient_id"] = t.patient_id;
      obj["step_index"] = t.step_index;
      obj["terminal"] = to_string(t.terminal);
      obj["clinical_label"] = to_string(t.clinical_label);
      obj["fluid_ml"] = t.fluid_ml;
      obj["vis"] = t.vis;
      obj["features"] = t.features;
      out << obj.dump() << '\n';
    }
  }
}

enum class Severity { Warning, Error };

struct ValidationIssue {
  Severity severity = Severity::Error;
  std::string patient_id;
  int step_index = -1;
  std::string message;
};

struct ValidationReport {
  std::size_t episode_count = 0;
  std::size_t transition_count = 0;
  std::size_t discharge_count = 0;
  std::size_t death_count = 0;
  std::size_t unterminated_count = 0;
  std::vector<std::size_t> nan_counts;  // per feature
  std::vector<ValidationIssue> issues;

  std::size_t error_count() const {
    return static_cast<std::size_t>(std::count_if(issues.begin(), issues.end(),
                                                  [](const auto& i) { return i.severity == Severity::Error; }));
  }
  std::size_t warning_count() const { return issues.size() - error_count(); }
  bool ok() const { return error_count() == 0; }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["episodes"] = episode_count;
    j["transitions"] = transition_count;
    j["outcomes"] = {{"discharge", discharge_count}, {"death", death_count}, {"unterminated", unterminated_count}};
    j["nan_counts"] = nan_counts;
    j["errors"] = error_count();
    j["warnings"] = warning_count();
    auto arr = nlohmann::ordered_json::array();
    for (const auto& i : issues) {
      arr.push_back({{"severity", i.severity == Severity::Error ? "error" : "warning"},
                     {"patient_id", i.patient_id},
                     {"step_index", i.step_index},
                     {"message", i.message}});
    }
    j["issues"] = arr;
    return j;
  }
};

inline ValidationReport validate_dataset(const Dataset& ds) {
  ValidationReport rep;
  rep.episode_count = ds.episodes.size();
  rep.nan_counts.assign(ds.dim, 0);
  auto add = [&rep](Severity s, const std::string& id, int step, std::string msg) {
    rep.issues.push_back({s, id, step, std::move(msg)});
  };

  for (std::size_t e = 0; e < ds.episodes.size(); ++e) {
    const auto& ep = ds.episodes[e];
    if (e > 0 && ds.episodes[e - 1].patient_id == ep.patient_id) {
      add(Severity::Error, ep.patient_id, -1, "duplicate patient id");
    }
    if (ep.transitions.empty()) {
      add(Severity::Error, ep.patient_id, -1, "empty episode");
      continue;
    }
    rep.transition_count += ep.size();
    switch (ep.transitions.back().terminal) {
      case Terminal::Discharge: ++rep.discharge_count; break;
      case Terminal::Death: ++rep.death_count; break;
      case Terminal::None:
        ++rep.unterminated_count;
        add(Severity::Error, ep.patient_id, ep.transitions.back().step_index,
            "episode does not end in discharge or death");
        break;
    }
    for (std::size_t i = 0; i < ep.size(); ++i) {
      const auto& t = ep.transitions[i];
      if (t.patient_id != ep.patient_id) add(Severity::Error, ep.patient_id, t.step_index, "patient id mismatch");
      if (i > 0 && t.step_index <= ep.transitions[i - 1].step_index) {
        add(Severity::Error, ep.patient_id, t.step_index, "step_index not strictly increasing");
      }
      if (i + 1 < ep.size() && t.terminal != Terminal::None) {
        add(Severity::Error, ep.patient_id, t.step_index, "terminal before end");
      }
      if (t.features.size() != ds.dim) {
        add(Severity::Error, ep.patient_id, t.step_index,
            "feature dimension " + std::to_string(t.features.size()) + " != " + std::to_string(ds.dim));
        continue;
      }
      if (!(t.fluid_ml >= 0.0) || !(t.vis >= 0.0)) {
        add(Severity::Error, ep.patient_id, t.step_index, "negative or missing dose");
      }
      for (std::size_t j = 0; j < ds.dim; ++j) {
        if (std::isnan(t.features[j])) ++rep.nan_counts[j];
      }
    }
  }
  for (std::size_t j = 0; j < ds.dim; ++j) {
    if (rep.nan_counts[j] > 0) {
      const std::string name = j < ds.feature_names.size() ? ds.feature_names[j] : "f_" + std::to_string(j);
      add(Severity::Warning, "", -1,
          "feature " + name + " has " + std::to_string(rep.nan_counts[j]) + " NaN values");
    }
  }
  return rep;
}

// Partition at patient granularity: returns (train, holdout). The holdout
// receives round(fraction * n_patients) patients, clamped to [1, n - 1].
inline std::pair<Dataset, Dataset> split_by_patient(const Dataset& ds, double holdout_fraction, std::uint64_t seed) {
  const std::size_t n = ds.episodes.size();
  if (n < 2) throw DataError("split_by_patient needs at least 2 patients");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw std::invalid_argument("holdout_fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_hold = static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(n)));
  n_hold = std::clamp<std::size_t>(n_hold, 1, n - 1);

  std::vector<Episode> train, hold;
  for (std::size_t i = 0; i < n; ++i) {
    (i < n_hold ? hold : train).push_back(ds.episodes[order[i]]);
  }
  return {Dataset::from_episodes(std::move(train), ds.dim), Dataset::from_episodes(std::move(hold), ds.dim)};
}

}  // namespace treatrl
