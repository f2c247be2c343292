#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "treetext/pipeline.hpp"
#include "treetext/synth.hpp"
#include "treetext/tem.hpp"

using namespace treetext;

namespace {

const std::vector<std::string> kVars{"GCS", "MAP"};

Predicate pred(const std::string& var, Stat s, Op op, double thr) {
  std::size_t v = var == "GCS" ? 0 : 1;
  return {var, s, op, thr, static_cast<int>(feature_index(v, s))};
}

// Ensemble over kVars with a single hand-built tree.
TreeEnsemble hand_ensemble() {
  TreeEnsemble e;
  e.feature_names = feature_names(kVars);
  Tree t;
  t.nodes.resize(5);
  auto split = [&](int id, int f, double thr, int l, int r) {
    t.nodes[id].feature = f;
    t.nodes[id].threshold = thr;
    t.nodes[id].left = l;
    t.nodes[id].right = r;
    t.nodes[l].parent = id;
    t.nodes[r].parent = id;
  };
  split(0, static_cast<int>(feature_index(1, Stat::kMin)), 65.0, 1, 2);
  split(1, static_cast<int>(feature_index(1, Stat::kMin)), 50.0, 3, 4);
  e.trees.push_back(t);
  Tree leaf_only;
  leaf_only.nodes.resize(1);
  e.trees.push_back(leaf_only);
  return e;
}

struct SmallWorld {
  SynthOutput synth;
  SummaryBank bank;
  std::map<double, TreeEnsemble> ensembles;

  SmallWorld() {
    SynthConfig sc;
    sc.n_patients = 240;
    sc.prevalence = 0.3;
    sc.seed = 11;
    synth = generate(sc);
    bank = build_summary_bank(synth.cohort, {8, 16});
    BoostConfig bc;
    bc.n_rounds = 10;
    ensembles = train_window_ensembles(bank, bc);
  }
};

const SmallWorld& world() {
  static const SmallWorld w;
  return w;
}

}  // namespace

TEST(ExtractPath, SingleSplitAndDegenerate) {
  auto e = hand_ensemble();
  auto p = extract_path(e, 0, 2);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p[0].variable, "MAP");
  EXPECT_EQ(p[0].stat, Stat::kMin);
  EXPECT_EQ(p[0].op, Op::kGreater);
  EXPECT_EQ(p[0].threshold, 65.0);
  EXPECT_TRUE(extract_path(e, 1, 0).empty());
  auto deep = extract_path(e, 0, 3);
  ASSERT_EQ(deep.size(), 2u);
  EXPECT_EQ(deep[0].threshold, 65.0);
  EXPECT_EQ(deep[1].threshold, 50.0);
  EXPECT_THROW(extract_path(e, 0, 1), Error);
  EXPECT_THROW(extract_path(e, 5, 0), Error);
}

TEST(Canonicalize, KeepsTightestLowerBound) {
  auto c = canonicalize({pred("MAP", Stat::kMin, Op::kGreater, 40), pred("MAP", Stat::kMin, Op::kGreater, 50)});
  ASSERT_EQ(c.predicates.size(), 1u);
  EXPECT_EQ(c.predicates[0].threshold, 50);
  EXPECT_FALSE(c.vacuous);
}

TEST(Canonicalize, DropsRangeRestatement) {
  RangeMap r;
  r[{"GCS", Stat::kLast}] = {3, 15};
  auto c = canonicalize({pred("GCS", Stat::kLast, Op::kLessEq, 15)}, &r);
  EXPECT_TRUE(c.predicates.empty());
  auto s = structural_ranges(kVars, 8);
  auto m = canonicalize({pred("MAP", Stat::kMissing, Op::kLessEq, 1), pred("MAP", Stat::kMissing, Op::kLessEq, 0.5)}, &s);
  ASSERT_EQ(m.predicates.size(), 1u);
  EXPECT_EQ(m.predicates[0].threshold, 0.5);
}

TEST(Canonicalize, EmptyAndVacuous) {
  EXPECT_TRUE(canonicalize({}).predicates.empty());
  auto c = canonicalize({pred("MAP", Stat::kMin, Op::kGreater, 70), pred("MAP", Stat::kMin, Op::kLessEq, 60)});
  EXPECT_TRUE(c.vacuous);
  EXPECT_EQ(c.predicates.size(), 2u);
}

TEST(Canonicalize, OutOfRangeBoundIsVacuousAndIdempotent) {
  auto s = structural_ranges(kVars, 8);
  auto c = canonicalize({pred("MAP", Stat::kMissing, Op::kGreater, 1), pred("MAP", Stat::kMissing, Op::kLessEq, 1)}, &s);
  EXPECT_TRUE(c.vacuous);
  ASSERT_EQ(c.predicates.size(), 1u);
  auto again = canonicalize(c.predicates, &s);
  EXPECT_TRUE(again.vacuous);
  EXPECT_EQ(again.predicates, c.predicates);
  EXPECT_TRUE(canonicalize({pred("MAP", Stat::kCount, Op::kLessEq, -0.5)}, &s).vacuous);
  EXPECT_FALSE(canonicalize({pred("MAP", Stat::kCount, Op::kLessEq, 0)}, &s).vacuous);
}

TEST(Canonicalize, FirstAppearanceOrder) {
  auto c = canonicalize({pred("MAP", Stat::kMin, Op::kLessEq, 70), pred("GCS", Stat::kLast, Op::kGreater, 8),
                         pred("MAP", Stat::kMin, Op::kLessEq, 60)});
  ASSERT_EQ(c.predicates.size(), 2u);
  EXPECT_EQ(c.predicates[0].variable, "MAP");
  EXPECT_EQ(c.predicates[0].threshold, 60);
  EXPECT_EQ(c.predicates[1].variable, "GCS");
}

TEST(Canonicalize, EquivalentAndIdempotentOnRandomPaths) {
  const double w = 8;
  RangeMap ranges = structural_ranges(kVars, w);
  ranges[{"GCS", Stat::kLast}] = {3, 15};
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<int> var_d(0, 1), stat_d(0, kNumStats - 1), depth_d(0, 5), op_d(0, 1);
  std::uniform_real_distribution<double> u(-4, 20);
  std::vector<std::vector<Predicate>> paths;
  for (int i = 0; i < 300; ++i) {
    std::vector<Predicate> p;
    int d = depth_d(rng);
    for (int k = 0; k < d; ++k)
      p.push_back(pred(kVars[var_d(rng)], static_cast<Stat>(stat_d(rng)), op_d(rng) ? Op::kGreater : Op::kLessEq,
                       std::round(u(rng) * 2) / 2));
    paths.push_back(p);
  }
  auto sample = [&](std::size_t f) {
    Stat s = static_cast<Stat>(f % kNumStats);
    std::size_t v = f / kNumStats;
    if (s == Stat::kMissing) return static_cast<double>(rng() % 2);
    if (s == Stat::kCount) return static_cast<double>(rng() % 12);
    if (s == Stat::kTsLastGap) return std::uniform_real_distribution<double>(0, w)(rng);
    if (v == 0 && s == Stat::kLast) return std::round(std::uniform_real_distribution<double>(3, 15)(rng));
    return std::round(u(rng) * 2) / 2;
  };
  std::vector<CanonicalPath> canon;
  for (const auto& p : paths) {
    canon.push_back(canonicalize(p, &ranges));
    auto again = canonicalize(canon.back().predicates, &ranges);
    EXPECT_EQ(again.predicates, canon.back().predicates);
  }
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> x(kVars.size() * kNumStats);
    for (std::size_t f = 0; f < x.size(); ++f) x[f] = sample(f);
    for (std::size_t k = 0; k < paths.size(); ++k)
      ASSERT_EQ(conjunction_holds(paths[k], x), conjunction_holds(canon[k].predicates, x)) << "path " << k;
  }
}

TEST(Render, Examples) {
  EXPECT_EQ(render({pred("MAP", Stat::kMin, Op::kLessEq, 65)}, 24, 8),
            "From 16:00 to 24:00: minimum MAP is at most 65.0000.");
  EXPECT_EQ(render_clause(pred("GCS", Stat::kLast, Op::kGreater, 110)), "last GCS is higher than 110.0000");
  EXPECT_EQ(render({}, 4, 4), "From 00:00 to 04:00: (no conditions).");
  EXPECT_EQ(render({pred("MAP", Stat::kStd, Op::kGreater, 1.5), pred("MAP", Stat::kTsLastGap, Op::kLessEq, 0.25)},
                   1.5, 1),
            "From 00:30 to 01:30: standard deviation of MAP is higher than 1.5000; "
            "time since last MAP is at most 0.2500.");
  EXPECT_EQ(format_clock(47.99), "47:59");
}

TEST(LeafScore, ClosedForm) {
  EXPECT_EQ(leaf_score(0.7, 0, 0.1), 0.0);
  EXPECT_EQ(leaf_score(0.3, 100, 0.3), 0.0);
  EXPECT_NEAR(leaf_score(0.6, std::exp(1.0) - 1, 0.1), 0.5, 1e-12);
  EXPECT_NEAR(leaf_score(0.05, 99, 0.15), std::log(100.0) * 0.1, 1e-12);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 1000; ++i) {
    double p = u(rng), p0 = u(rng), n = std::floor(u(rng) * 500);
    double s = leaf_score(p, n, p0);
    EXPECT_GE(s, 0.0);
    EXPECT_LE(leaf_score(p, n, p0), leaf_score(p, n + 1, p0));
  }
}

TEST(Gloss, NullTemplateExternal) {
  NullGlosser null;
  GlossCache nc(null);
  EXPECT_EQ(gloss_lookup(nc, "W8", 0, 1, "x", "task").g, 0);

  auto tmpl = TemplateGlosser::default_table();
  std::vector<Predicate> hypo{pred("MAP", Stat::kMin, Op::kLessEq, 60)};
  GlossQuery q{"W8", 0, 1, &hypo, "", ""};
  auto r = tmpl.annotate(q);
  EXPECT_EQ(r.g, 1);
  EXPECT_EQ(*r.gloss, "compatible with hypotension.");
  std::vector<Predicate> normal{pred("MAP", Stat::kMin, Op::kLessEq, 90)};
  q.predicates = &normal;
  EXPECT_EQ(tmpl.annotate(q).g, 0);

  auto ext = ExternalGlosser::from_string(
      R"({"ensemble":"W8","tree":0,"leaf":3,"g":1,"gloss":"compatible with hypotension, tachycardia."})"
      "\n"
      R"({"ensemble":"W8","tree":0,"leaf":4,"g":0,"gloss":""})");
  GlossCache ec(ext);
  auto hit = gloss_lookup(ec, "W8", 0, 3, "", "");
  EXPECT_EQ(hit.g, 1);
  EXPECT_EQ(*hit.gloss, "compatible with hypotension, tachycardia.");
  EXPECT_EQ(gloss_lookup(ec, "W8", 0, 9, "", "").g, 0);
  EXPECT_EQ(ext.misses(), 1u);
  gloss_lookup(ec, "W8", 0, 3, "", "");
  EXPECT_EQ(ec.provider_calls(), 2u);
  EXPECT_THROW(ExternalGlosser::from_string(R"({"ensemble":"W8","tree":0,"leaf":3,"g":1,"gloss":""})"), ParseError);
}

TEST(EvidenceUnit, TextComposition) {
  EvidenceUnit u;
  u.pred_text = "From 16:00 to 24:00: minimum MAP is at most 65.0000.";
  EXPECT_EQ(u.text(), u.pred_text);
  u.g = 1;
  u.gloss = "compatible with hypotension.";
  EXPECT_EQ(u.text(), u.pred_text + " cg: compatible with hypotension.");
}

TEST(Candidates, TopMPerRowAndTieBreak) {
  const auto& wd = world();
  NullGlosser null;
  GlossCache cache(null);
  EvidenceOptions opts;
  opts.top_m = 5;
  opts.base_rate = wd.synth.cohort.base_rate();
  EvidenceMapper mapper(wd.ensembles, wd.bank.variables, cache, opts);
  for (const auto& row : wd.bank.rows) {
    auto units = mapper.units_for_row(row);
    std::size_t nonvacuous = 0;
    const auto& ens = wd.ensembles.at(row.window.width);
    for (const auto& hit : route(ens, row.stats))
      nonvacuous += !mapper.leaf_record(row.window.width, hit.tree, hit.leaf).vacuous;
    EXPECT_EQ(units.size(), std::min<std::size_t>(5, nonvacuous));
    for (std::size_t i = 1; i < units.size(); ++i) {
      const auto& a = units[i - 1];
      const auto& b = units[i];
      EXPECT_TRUE(a.leaf_score > b.leaf_score || (a.leaf_score == b.leaf_score && a.source.tree < b.source.tree));
    }
    for (const auto& u : units) EXPECT_TRUE(conjunction_holds(u.predicates, row.stats));
  }
  EvidenceOptions all = opts;
  all.top_m = 100;
  EvidenceMapper wide(wd.ensembles, wd.bank.variables, cache, all);
  EXPECT_EQ(wide.units_for_row(wd.bank.rows.front()).size(), wd.ensembles.at(8).trees.size());
}

TEST(Candidates, TraceableFromSourceTuple) {
  const auto& wd = world();
  NullGlosser null;
  GlossCache cache(null);
  EvidenceOptions opts;
  opts.base_rate = wd.synth.cohort.base_rate();
  EvidenceMapper mapper(wd.ensembles, wd.bank.variables, cache, opts);
  auto pools = build_candidates(wd.bank, mapper);
  std::size_t checked = 0;
  for (const auto& [id, pool] : pools) {
    for (std::size_t i = 1; i < pool.size(); ++i) EXPECT_FALSE(source_less(pool[i].source, pool[i - 1].source));
    for (const auto& u : pool) {
      const auto& ens = wd.ensembles.at(u.source.w);
      RangeMap ranges = structural_ranges(wd.bank.variables, u.source.w);
      auto canon = canonicalize(extract_path(ens, u.source.tree, u.source.leaf), &ranges);
      EXPECT_EQ(canon.predicates, u.predicates);
      EXPECT_EQ(render(canon.predicates, u.source.t, u.source.w), u.pred_text);
      EXPECT_TRUE(conjunction_holds(u.predicates, wd.bank.at(id, u.source.t, u.source.w).stats));
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000u);

  std::ostringstream out;
  out << pools_to_jsonl(pools);
  std::istringstream in(out.str());
  auto back = pools_from_jsonl(in);
  EXPECT_EQ(pools_to_jsonl(back), out.str());
}

TEST(Candidates, GlossCacheCallsOncePerLeaf) {
  const auto& wd = world();
  auto tmpl = TemplateGlosser::default_table();
  GlossCache cache(tmpl);
  EvidenceMapper mapper(wd.ensembles, wd.bank.variables, cache, EvidenceOptions{});
  build_candidates(wd.bank, mapper);
  std::size_t nonvacuous = 0;
  for (const auto& [k, rec] : mapper.leaf_cache()) nonvacuous += !rec.vacuous;
  EXPECT_EQ(cache.provider_calls(), nonvacuous);
}
