#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "treetext/metrics.hpp"

using namespace treetext;

namespace {

std::vector<double> v(std::initializer_list<double> x) { return x; }
std::vector<int> l(std::initializer_list<int> x) { return x; }

}  // namespace

TEST(Auroc, Examples) {
  EXPECT_EQ(auroc(v({0.1, 0.2, 0.8, 0.9}), l({0, 0, 1, 1})), 1.0);
  EXPECT_EQ(auroc(v({0.3, 0.3, 0.3}), l({0, 1, 1})), 0.5);
  EXPECT_EQ(auroc(v({0.1, 0.4, 0.35, 0.8}), l({0, 0, 1, 1})), 0.75);
  EXPECT_THROW(auroc(v({0.1, 0.2}), l({1, 1})), Error);
  EXPECT_THROW(auroc(v({0.1}), l({1, 0})), Error);
}

TEST(Auprc, Examples) {
  std::vector<double> s(10);
  std::vector<int> y(10, 0);
  for (int i = 0; i < 10; ++i) s[i] = i;
  y[9] = 1;
  EXPECT_EQ(auprc(s, y), 1.0);
  EXPECT_NEAR(auprc(v({0.9, 0.8, 0.7}), l({1, 0, 1})), (1.0 + 2.0 / 3.0) / 2, 1e-15);
  EXPECT_THROW(auprc(v({0.9, 0.8}), l({0, 0})), Error);
}

TEST(Auprc, RandomScoresApproachPrevalence) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> s(20000);
  std::vector<int> y(20000);
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i] = u(rng);
    y[i] = u(rng) < 0.2;
  }
  EXPECT_NEAR(auprc(s, y), 0.2, 0.01);
}

TEST(Metrics, MatchBruteForceWithTies) {
  std::mt19937_64 rng(8);
  for (int inst = 0; inst < 200; ++inst) {
    std::size_t n = 2 + rng() % 49;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 6) / 5.0;
      y[i] = rng() % 3 == 0;
    }
    y[0] = 1;
    y[1] = 0;
    EXPECT_EQ(auroc(s, y), oracle::auroc(s, y)) << inst;
    EXPECT_EQ(auprc(s, y), oracle::auprc(s, y)) << inst;
  }
}

TEST(F1, Examples) {
  EXPECT_EQ(f1_at_threshold(v({0.9, 0.1}), l({1, 0}), 0.5), 1.0);
  EXPECT_EQ(f1_at_threshold(v({0.4, 0.1}), l({1, 0}), 0.5), 0.0);
  auto best = f1_at_best_threshold(v({0.9, 0.8, 0.2, 0.1}), l({1, 1, 0, 0}));
  EXPECT_EQ(best.f1, 1.0);
  EXPECT_EQ(best.threshold, 0.8);
  EXPECT_THROW(f1_at_best_threshold(v({0.9, 0.1}), l({0, 0})), Error);
}

TEST(F1, BestThresholdIsMaximal) {
  std::mt19937_64 rng(12);
  for (int inst = 0; inst < 100; ++inst) {
    std::size_t n = 2 + rng() % 30;
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng() % 8);
      y[i] = rng() % 2;
    }
    y[0] = 1;
    auto best = f1_at_best_threshold(s, y);
    EXPECT_EQ(best.f1, f1_at_threshold(s, y, best.threshold));
    for (double t : s) EXPECT_LE(f1_at_threshold(s, y, t), best.f1);
  }
}

TEST(Report, CountsAndJson) {
  auto r = metric_report(v({0.9, 0.2, 0.6}), l({1, 0, 0}), 0.5);
  EXPECT_EQ(r.n_pos, 1u);
  EXPECT_EQ(r.n_neg, 2u);
  EXPECT_EQ(r.auroc, 1.0);
  EXPECT_NEAR(r.f1, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(r.to_json()["threshold"], 0.5);
}
