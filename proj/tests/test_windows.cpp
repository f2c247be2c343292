#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "treetext/windows.hpp"

using namespace treetext;

namespace {

PatientRecord record(std::vector<Event> events, int label = 0) {
  PatientRecord r;
  r.id = "p";
  r.events = std::move(events);
  r.label = label;
  return r;
}

double stat(const SummaryRow& row, std::size_t v, Stat s) { return row.at(v, s); }

Cohort cohort_of(std::vector<PatientRecord> recs, std::vector<std::string> vars, double horizon = 48) {
  Cohort c;
  c.horizon = horizon;
  c.variables = std::move(vars);
  for (auto& r : recs) {
    c.split[r.id] = Split::kTrain;
    c.records.push_back(std::move(r));
  }
  return c;
}

}  // namespace

TEST(WindowGrid, Endpoints) {
  auto g = window_grid(48, 16);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_EQ(g[0].end, 16);
  EXPECT_EQ(g[2].end, 48);
  EXPECT_EQ(window_grid(48, 48).size(), 1u);
  auto g2 = window_grid(60, 32);
  ASSERT_EQ(g2.size(), 1u);
  EXPECT_EQ(g2[0].end, 32);
  EXPECT_TRUE(window_grid(10, 16).empty());
}

TEST(WindowGrid, HorizonEndpointFlag) {
  auto g = window_grid(60, 32, true);
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[1].end, 60);
  EXPECT_EQ(window_grid(48, 16, true).size(), 3u);
}

TEST(Summarize, TwoObservations) {
  auto r = record({{"HR", 23.5, 110}, {"HR", 23.9, 120}});
  auto row = summarize(r, {24, 1}, {"HR"});
  EXPECT_EQ(stat(row, 0, Stat::kLast), 120);
  EXPECT_EQ(stat(row, 0, Stat::kMean), 115);
  EXPECT_EQ(stat(row, 0, Stat::kStd), 5);
  EXPECT_EQ(stat(row, 0, Stat::kMin), 110);
  EXPECT_EQ(stat(row, 0, Stat::kMax), 120);
  EXPECT_EQ(stat(row, 0, Stat::kCount), 2);
  EXPECT_EQ(stat(row, 0, Stat::kDelta), 10);
  EXPECT_NEAR(stat(row, 0, Stat::kTsLastGap), 0.1, 1e-12);
  EXPECT_EQ(stat(row, 0, Stat::kMissing), 0);
}

TEST(Summarize, MissingFill) {
  auto r = record({{"HR", 10, 80}});
  auto row = summarize(r, {24, 8}, {"HR"});
  for (Stat s : {Stat::kLast, Stat::kMean, Stat::kStd, Stat::kMin, Stat::kMax}) EXPECT_EQ(stat(row, 0, s), -1);
  EXPECT_EQ(stat(row, 0, Stat::kCount), 0);
  EXPECT_EQ(stat(row, 0, Stat::kDelta), 0);
  EXPECT_EQ(stat(row, 0, Stat::kTsLastGap), 8);
  EXPECT_EQ(stat(row, 0, Stat::kMissing), 1);
}

TEST(Summarize, SingleObservation) {
  auto row = summarize(record({{"X", 20, 7.0}}), {24, 8}, {"X"});
  EXPECT_EQ(stat(row, 0, Stat::kStd), 0);
  EXPECT_EQ(stat(row, 0, Stat::kDelta), 0);
  EXPECT_EQ(stat(row, 0, Stat::kTsLastGap), 4);
}

TEST(Summarize, HalfOpenInterval) {
  auto r = record({{"X", 16, 1.0}, {"X", 24, 2.0}});
  auto row = summarize(r, {24, 8}, {"X"});
  EXPECT_EQ(stat(row, 0, Stat::kCount), 1);
  EXPECT_EQ(stat(row, 0, Stat::kLast), 2.0);
}

TEST(Summarize, TiedTimesLaterInputWins) {
  auto row = summarize(record({{"X", 5, 1.0}, {"X", 5, 3.0}}), {8, 8}, {"X"});
  EXPECT_EQ(stat(row, 0, Stat::kLast), 3.0);
  EXPECT_EQ(stat(row, 0, Stat::kDelta), 2.0);
}

TEST(Summarize, MatchesBruteForceOnRandomRecords) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> time(0, 48), val(-50, 150);
  std::uniform_int_distribution<int> count(0, 12), var(0, 2), coarse(0, 8);
  const std::vector<std::string> vars{"A", "B", "C"};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Event> ev;
    int n = count(rng);
    for (int i = 0; i < n; ++i) {
      // Coarse times create ties and boundary hits.
      double t = trial % 2 ? time(rng) : 6.0 * coarse(rng);
      ev.push_back({vars[var(rng)], t, val(rng)});
    }
    std::stable_sort(ev.begin(), ev.end(), [](const Event& a, const Event& b) { return a.time < b.time; });
    auto r = record(ev);
    for (double w : {1.0, 4.0, 8.0, 16.0, 48.0}) {
      for (const auto& spec : window_grid(48, w)) {
        auto row = summarize(r, spec, vars);
        for (std::size_t v = 0; v < vars.size(); ++v) {
          auto ref = oracle::summarize_one(r, vars[v], spec.end, spec.width);
          for (int s = 0; s < kNumStats; ++s) {
            double got = row.at(v, static_cast<Stat>(s));
            if (static_cast<Stat>(s) == Stat::kMean || static_cast<Stat>(s) == Stat::kStd)
              EXPECT_DOUBLE_EQ(got, ref[s]);
            else
              EXPECT_EQ(got, ref[s]) << "stat " << kStatNames[s];
          }
        }
      }
    }
  }
}

TEST(Summarize, RowInvariantsAndContainment) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> time(0, 48), val(0, 10);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Event> ev;
    for (int i = 0; i < 30; ++i) ev.push_back({"A", time(rng), val(rng)});
    std::stable_sort(ev.begin(), ev.end(), [](const Event& a, const Event& b) { return a.time < b.time; });
    auto r = record(ev);
    for (double t : {8.0, 16.0, 24.0, 48.0}) {
      auto small = summarize(r, {t, 1}, {"A"});
      auto big = summarize(r, {t, 8}, {"A"});
      EXPECT_GE(big.at(0, Stat::kCount), small.at(0, Stat::kCount));
      for (const auto* row : {&small, &big}) {
        bool missing = row->at(0, Stat::kMissing) == 1;
        EXPECT_EQ(missing, row->at(0, Stat::kCount) == 0);
        if (!missing) {
          EXPECT_LE(row->at(0, Stat::kMin), row->at(0, Stat::kMean));
          EXPECT_LE(row->at(0, Stat::kMean), row->at(0, Stat::kMax));
          EXPECT_GE(row->at(0, Stat::kStd), 0);
          EXPECT_GE(row->at(0, Stat::kTsLastGap), 0);
          EXPECT_LE(row->at(0, Stat::kTsLastGap), row->window.width);
        }
      }
    }
  }
}

TEST(SummaryBank, GridCounts) {
  auto c = cohort_of({record({{"A", 1, 1}})}, {"A"});
  EXPECT_EQ(build_summary_bank(c, {16, 48}).rows.size(), 4u);
  EXPECT_EQ(build_summary_bank(c, {1}).rows.size(), 48u);
  EXPECT_THROW(build_summary_bank(c, {8, 8}), Error);
  EXPECT_THROW(build_summary_bank(c, {0}), Error);
}

TEST(SummaryBank, EmptyPatientFullyMissing) {
  auto c = cohort_of({record({})}, {"A", "B"});
  auto bank = build_summary_bank(c, {8});
  for (const auto& row : bank.rows)
    for (std::size_t v = 0; v < 2; ++v) EXPECT_EQ(row.at(v, Stat::kMissing), 1);
}

TEST(SummaryBank, IndexAndCsvRoundTrip) {
  auto c = cohort_of({record({{"A", 3.3, 1.5}, {"B", 40.1, -2.25}}, 1)}, {"A", "B"});
  auto bank = build_summary_bank(c, {8, 16});
  EXPECT_EQ(bank.at("p", 16, 8).window.end, 16);
  EXPECT_FALSE(bank.find("p", 17, 8));
  std::istringstream in(bank_to_csv(bank));
  auto back = bank_from_csv(in, 48);
  ASSERT_EQ(back.rows.size(), bank.rows.size());
  EXPECT_EQ(back.variables, bank.variables);
  EXPECT_EQ(back.window_sizes, bank.window_sizes);
  for (std::size_t i = 0; i < bank.rows.size(); ++i) {
    EXPECT_EQ(back.rows[i].stats, bank.rows[i].stats);
    EXPECT_EQ(back.rows[i].label, 1);
    EXPECT_EQ(back.rows[i].window, bank.rows[i].window);
  }
}

TEST(SummaryBank, Deterministic) {
  auto c = cohort_of({record({{"A", 3.3, 1.5}, {"A", 7.7, 2.5}})}, {"A"});
  EXPECT_EQ(bank_to_csv(build_summary_bank(c, {4, 8})), bank_to_csv(build_summary_bank(c, {4, 8})));
}
