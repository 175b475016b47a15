#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "treatrl/dataset.hpp"

using namespace treatrl;

namespace {

const char* kTwoPatients =
    "patient_id,step_index,terminal,clinical_label,fluid_ml,vis,f_0,f_1\n"
    "a,0,none,sepsis,100,0,0.5,1.5\n"
    "a,1,none,septic_shock,300,4.5,0.25,-1\n"
    "a,2,discharge,non_sepsis,0,0,1e-3,2\n"
    "b,0,none,non_sepsis,50,0,3,4\n"
    "b,1,none,sepsis,960,21,5,6\n"
    "b,2,death,septic_shock,1000,2,7,8\n";

std::string header(int d) {
  std::string h = "patient_id,step_index,terminal,clinical_label,fluid_ml,vis";
  for (int j = 0; j < d; ++j) h += ",f_" + std::to_string(j);
  return h + "\n";
}

Dataset random_dataset(int patients, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 3.0);
  std::uniform_int_distribution<int> len(1, 6);
  std::vector<Episode> eps;
  for (int i = 0; i < patients; ++i) {
    Episode ep;
    ep.patient_id = "pt" + std::to_string(i);
    const int n = len(rng);
    for (int s = 0; s < n; ++s) {
      Transition t;
      t.patient_id = ep.patient_id;
      t.step_index = 2 * s + 1;
      for (int j = 0; j < d; ++j) t.features.push_back(g(rng));
      t.fluid_ml = std::abs(g(rng)) * 100.0;
      t.vis = s % 2 ? 0.0 : std::abs(g(rng));
      t.clinical_label = static_cast<ClinicalLabel>(s % 3);
      if (s + 1 == n) t.terminal = i % 2 ? Terminal::Death : Terminal::Discharge;
      ep.transitions.push_back(t);
    }
    eps.push_back(ep);
  }
  return Dataset::from_episodes(eps, static_cast<std::size_t>(d));
}

std::string error_of(const std::string& text, LogFormat f = LogFormat::Csv) {
  try {
    parse_transition_log(text, f);
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Parse, TwoPatientsSixRows) {
  const auto ds = parse_transition_log(std::string(kTwoPatients), LogFormat::Csv);
  EXPECT_EQ(ds.patient_count(), 2u);
  EXPECT_EQ(ds.transition_count(), 6u);
  EXPECT_EQ(ds.dim, 2u);
  EXPECT_EQ(ds.episodes[0].outcome(), Outcome::Discharge);
  EXPECT_EQ(ds.episodes[1].outcome(), Outcome::Death);
  EXPECT_EQ(ds.episodes[0].transitions[1].clinical_label, ClinicalLabel::SepticShock);
  EXPECT_DOUBLE_EQ(ds.episodes[0].transitions[2].features[0], 1e-3);
}

TEST(Parse, DimensionMismatchNamesTheRow) {
  std::string text = header(6) + "a,0,none,sepsis,1,0,1,2,3,4,5,6\n" + "a,1,discharge,sepsis,1,0,1,2,3,4,5\n";
  const auto msg = error_of(text);
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
  EXPECT_NE(msg.find("dimension"), std::string::npos) << msg;
}

TEST(Parse, JsonlDimensionMismatch) {
  std::string text =
      R"({"patient_id":"a","step_index":0,"terminal":"none","clinical_label":"sepsis","fluid_ml":1,"vis":0,"features":[1,2]})"
      "\n"
      R"({"patient_id":"a","step_index":1,"terminal":"death","clinical_label":"sepsis","fluid_ml":1,"vis":0,"features":[1]})"
      "\n";
  const auto msg = error_of(text, LogFormat::Jsonl);
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
}

TEST(Parse, StructuralErrors) {
  EXPECT_NE(error_of(header(1) + "a,0,none,sepsis,1,0,1\n").find("no terminal"), std::string::npos);
  EXPECT_NE(error_of(header(1) + "a,0,none,sepsis,1,0,1\na,0,death,sepsis,1,0,1\n").find("duplicate"),
            std::string::npos);
  EXPECT_NE(error_of(header(1) + "a,x,none,sepsis,1,0,1\n").find("line 2"), std::string::npos);
  EXPECT_NE(error_of(header(1) + "a,0,none,sepsis,-1,0,1\na,1,death,sepsis,1,0,1\n").find("fluid_ml"),
            std::string::npos);
  EXPECT_NE(error_of(header(1) + "a,0,none,sepsis,1,0,nan\na,1,death,sepsis,1,0,1\n").find("NaN"), std::string::npos);
  EXPECT_NE(error_of(header(1) + "a,0,death,sepsis,1,0,1\na,1,death,sepsis,1,0,1\n").find("terminal before end"),
            std::string::npos);
  EXPECT_NE(error_of("patient_id,step\n").find("header"), std::string::npos);
  EXPECT_NE(error_of(header(1) + "a,0,none,bogus,1,0,1\n").find("clinical_label"), std::string::npos);
}

TEST(Parse, ClinicalLabelIsOptional) {
  const auto ds = parse_transition_log(header(1) + "a,0,none,,1,0,1\na,1,death,,1,0,1\n", LogFormat::Csv);
  EXPECT_EQ(ds.episodes[0].transitions[0].clinical_label, ClinicalLabel::NonSepsis);
  const auto js = parse_transition_log(
      std::string(R"({"patient_id":"a","step_index":0,"terminal":"death","fluid_ml":1,"vis":0,"features":[1]})") + "\n",
      LogFormat::Jsonl);
  EXPECT_EQ(js.episodes[0].transitions[0].clinical_label, ClinicalLabel::NonSepsis);
}

TEST(Parse, RoundTripIsBitExact) {
  auto ds = random_dataset(40, 4, 3);
  ds.episodes[0].transitions[0].features[0] = 0.1;
  ds.episodes[0].transitions[0].features[1] = 5e-324;
  ds.episodes[0].transitions[0].features[2] = -1.7976931348623157e308;
  for (auto fmt : {LogFormat::Csv, LogFormat::Jsonl}) {
    std::ostringstream out;
    write_transition_log(out, ds, fmt);
    const auto back = parse_transition_log(out.str(), fmt);
    EXPECT_EQ(back, ds);
  }
}

TEST(Parse, RowOrderAcrossPatientsDoesNotMatter) {
  const auto ds = random_dataset(25, 3, 9);
  std::ostringstream out;
  write_transition_log(out, ds, LogFormat::Csv);
  std::istringstream in(out.str());
  std::string head, line;
  std::getline(in, head);
  std::vector<std::string> rows;
  while (std::getline(in, line)) rows.push_back(line);
  std::mt19937_64 rng(11);
  std::shuffle(rows.begin(), rows.end(), rng);
  std::string shuffled = head + "\n";
  for (const auto& r : rows) shuffled += r + "\n";
  EXPECT_EQ(parse_transition_log(shuffled, LogFormat::Csv), ds);
}

TEST(Validate, CleanDataset) {
  const auto rep = validate_dataset(parse_transition_log(std::string(kTwoPatients), LogFormat::Csv));
  EXPECT_EQ(rep.error_count(), 0u);
  EXPECT_EQ(rep.episode_count, 2u);
  EXPECT_EQ(rep.transition_count, 6u);
  EXPECT_EQ(rep.discharge_count, 1u);
  EXPECT_EQ(rep.death_count, 1u);
  EXPECT_TRUE(rep.ok());
}

TEST(Validate, TerminalBeforeEnd) {
  auto ds = parse_transition_log(std::string(kTwoPatients), LogFormat::Csv);
  ds.episodes[0].transitions[1].terminal = Terminal::Death;
  const auto rep = validate_dataset(ds);
  ASSERT_FALSE(rep.ok());
  const bool found = std::any_of(rep.issues.begin(), rep.issues.end(), [](const ValidationIssue& i) {
    return i.severity == Severity::Error && i.message == "terminal before end";
  });
  EXPECT_TRUE(found);
}

TEST(Validate, NanFeatureIsAWarningWithNameAndCount) {
  auto ds = parse_transition_log(std::string(kTwoPatients), LogFormat::Csv);
  ds.episodes[1].transitions[0].features[1] = std::nan("");
  ds.episodes[1].transitions[2].features[1] = std::nan("");
  const auto rep = validate_dataset(ds);
  EXPECT_TRUE(rep.ok());
  ASSERT_EQ(rep.warning_count(), 1u);
  EXPECT_EQ(rep.nan_counts[1], 2u);
  const auto& w = rep.issues.back();
  EXPECT_NE(w.message.find("f_1"), std::string::npos);
  EXPECT_NE(w.message.find("2 NaN"), std::string::npos);
}

TEST(Validate, LenientParseFeedsTheReport) {
  const auto ds = parse_transition_log(header(1) + "a,0,none,sepsis,1,0,1\n", LogFormat::Csv, ParseMode::Lenient);
  const auto rep = validate_dataset(ds);
  EXPECT_EQ(rep.unterminated_count, 1u);
  EXPECT_FALSE(rep.ok());
  const auto j = rep.to_json();
  EXPECT_EQ(j["errors"], 1);
}

TEST(Split, SevenThreeAndDisjoint) {
  const auto ds = random_dataset(10, 2, 1);
  const auto [train, hold] = split_by_patient(ds, 0.3, 1);
  EXPECT_EQ(train.patient_count(), 7u);
  EXPECT_EQ(hold.patient_count(), 3u);
  for (const auto& e : hold.episodes) EXPECT_EQ(train.find(e.patient_id), nullptr);
}

TEST(Split, Deterministic) {
  const auto ds = random_dataset(10, 2, 1);
  EXPECT_EQ(split_by_patient(ds, 0.3, 1), split_by_patient(ds, 0.3, 1));
}

TEST(Split, PartitionOfOneHundred) {
  const auto ds = random_dataset(100, 2, 5);
  const auto [a, b] = split_by_patient(ds, 0.5, 17);
  std::multiset<std::string> seen;
  for (const auto& e : a.episodes) seen.insert(e.patient_id);
  for (const auto& e : b.episodes) seen.insert(e.patient_id);
  ASSERT_EQ(seen.size(), 100u);
  for (const auto& e : ds.episodes) {
    EXPECT_EQ(seen.count(e.patient_id), 1u);
    const auto* in_a = a.find(e.patient_id);
    const auto* in_b = b.find(e.patient_id);
    EXPECT_EQ(*(in_a ? in_a : in_b), e);
  }
}

TEST(Split, NeedsTwoPatients) {
  EXPECT_THROW(split_by_patient(random_dataset(1, 2, 1), 0.5, 1), DataError);
  EXPECT_THROW(split_by_patient(random_dataset(4, 2, 1), 1.0, 1), std::invalid_argument);
}
