#include <gtest/gtest.h>

#include <cmath>

#include "treetext/pipeline.hpp"
#include "treetext/eval.hpp"
#include "treetext/metrics.hpp"
#include "treetext/synth.hpp"

using namespace treetext;

TEST(Synth, DeterministicAndWellFormed) {
  SynthConfig cfg;
  cfg.n_patients = 300;
  auto a = generate(cfg);
  auto b = generate(cfg);
  EXPECT_EQ(a.cohort, b.cohort);
  EXPECT_EQ(a.annotations.to_json().dump(), b.annotations.to_json().dump());
  ASSERT_EQ(a.cohort.records.size(), 300u);
  EXPECT_EQ(a.cohort.records.front().id, "p00000");
  for (const auto& r : a.cohort.records) {
    EXPECT_TRUE(std::is_sorted(r.events.begin(), r.events.end(),
                               [](const Event& x, const Event& y) { return x.time < y.time; }));
    for (const auto& e : r.events) {
      EXPECT_GT(e.time, 0.0);
      EXPECT_LE(e.time, cfg.horizon);
    }
    EXPECT_EQ(r.label == 1, a.annotations.carried.count(r.id) == 1);
    EXPECT_EQ(r.statics.size(), 2u);
  }
  cfg.seed = 8;
  EXPECT_NE(generate(cfg).cohort, a.cohort);
}

TEST(Synth, PrevalenceAndSplits) {
  SynthConfig cfg;
  cfg.n_patients = 4000;
  auto out = generate(cfg);
  double pos = 0;
  for (const auto& r : out.cohort.records) pos += r.label;
  EXPECT_NEAR(pos / 4000, 0.15, 0.02);
  for (auto s : {Split::kTrain, Split::kVal, Split::kTest}) EXPECT_FALSE(out.cohort.in_split(s).empty());
}

TEST(Synth, ValidatesConfig) {
  SynthConfig cfg;
  cfg.prevalence = 1.0;
  EXPECT_THROW(generate(cfg), Error);
  cfg = SynthConfig{};
  cfg.patterns.push_back({"Nope", 0, 8, 1, 1});
  EXPECT_THROW(generate(cfg), Error);
  cfg = SynthConfig{};
  cfg.variables[0].rate = 0;
  EXPECT_THROW(generate(cfg), Error);
}

TEST(Synth, SignalWindows) {
  SynthAnnotations a;
  a.patterns = SynthConfig::default_patterns();
  a.carried["p1"] = {0};
  EXPECT_TRUE(a.window_has_signal("p1", 48, 8));
  EXPECT_TRUE(a.window_has_signal("p1", 48, 48));
  EXPECT_TRUE(a.window_has_signal("p1", 44, 4));
  EXPECT_FALSE(a.window_has_signal("p1", 40, 8));
  EXPECT_FALSE(a.window_has_signal("p1", 42, 16));  // overlap 2 of the 8-hour region
  EXPECT_FALSE(a.window_has_signal("p2", 48, 8));
  auto back = SynthAnnotations::from_json(nlohmann::json::parse(a.to_json().dump()));
  EXPECT_EQ(back.to_json().dump(), a.to_json().dump());
}

TEST(Synth, PatternShiftsTheSignalWindow) {
  SynthConfig cfg;
  cfg.n_patients = 1500;
  auto out = generate(cfg);
  auto bank = build_summary_bank(out.cohort, {8});
  const std::size_t map = 1;
  ASSERT_EQ(out.cohort.variables[map], "MAP");
  double pos_min = 0, neg_min = 0, npos = 0, nneg = 0;
  for (const auto& row : bank.rows) {
    if (row.window.end != 48 || row.at(map, Stat::kMissing) == 1) continue;
    (row.label ? pos_min : neg_min) += row.at(map, Stat::kMin);
    (row.label ? npos : nneg) += 1;
  }
  EXPECT_LT(pos_min / npos, neg_min / nneg - 5);
}

TEST(Synth, NullEffectGivesChanceAuroc) {
  SynthConfig cfg;
  cfg.n_patients = 2000;
  cfg.prevalence = 0.3;
  for (auto& p : cfg.patterns) p.shift_sd = 0;
  auto out = generate(cfg);
  auto bank = build_summary_bank(out.cohort, {8, 16});
  BoostConfig bc;
  bc.n_rounds = 10;
  auto ens = train_window_ensembles(bank, bc);
  auto agg = xgb_aggregate(bank, ens, AggregateMode::kMean);
  std::vector<double> s;
  std::vector<int> y;
  for (const auto* r : out.cohort.in_split(Split::kTest)) {
    s.push_back(agg.at(r->id));
    y.push_back(r->label);
  }
  EXPECT_NEAR(auroc(s, y), 0.5, 0.05);
}
