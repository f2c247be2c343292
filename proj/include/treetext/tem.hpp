#pragma once

// Tree-to-evidence mapping: activated paths become canonical predicates,
// deterministic condition text, optional cached glosses, and leaf scores.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "json.hpp"
#include "treetext/boost.hpp"
#include "treetext/common.hpp"
#include "treetext/windows.hpp"

namespace treetext {

enum class Op { kGreater, kLessEq };

inline const char* op_symbol(Op op) { return op == Op::kGreater ? ">" : "<="; }

struct Predicate {
  std::string variable;
  Stat stat = Stat::kLast;
  Op op = Op::kLessEq;
  double threshold = 0.0;
  int feature = -1;  // column in the summary row

  bool holds(std::span<const double> row) const {
    double x = row[static_cast<std::size_t>(feature)];
    return op == Op::kGreater ? x > threshold : x <= threshold;
  }
  bool operator==(const Predicate&) const = default;
};

inline bool conjunction_holds(const std::vector<Predicate>& preds, std::span<const double> row) {
  return std::all_of(preds.begin(), preds.end(), [&](const Predicate& p) { return p.holds(row); });
}

struct FeatureRange {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
};

// Known feasible ranges keyed by (variable, statistic).
using RangeMap = std::map<std::pair<std::string, Stat>, FeatureRange>;

// Ranges that hold by construction of the summaries for window width `w`.
inline RangeMap structural_ranges(const std::vector<std::string>& variables, double w) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  RangeMap r;
  for (const auto& v : variables) {
    r[{v, Stat::kMissing}] = {0.0, 1.0};
    r[{v, Stat::kCount}] = {0.0, inf};
    r[{v, Stat::kTsLastGap}] = {0.0, w};
  }
  return r;
}

// Declared ranges are intersected into `base`.
inline void merge_ranges(RangeMap& base, const RangeMap& declared) {
  for (const auto& [k, rg] : declared) {
    auto it = base.find(k);
    if (it == base.end()) {
      base[k] = rg;
    } else {
      it->second.lo = std::max(it->second.lo, rg.lo);
      it->second.hi = std::min(it->second.hi, rg.hi);
    }
  }
}

// {"GCS": {"last": [3, 15], "min": [3, 15]}, ...}
inline RangeMap ranges_from_json(const nlohmann::json& j) {
  RangeMap r;
  for (const auto& [var, stats] : j.items()) {
    for (const auto& [sname, bounds] : stats.items()) {
      auto s = parse_stat(sname);
      if (!s) throw Error("unknown statistic '" + sname + "' in range file");
      if (!bounds.is_array() || bounds.size() != 2) throw Error("range must be [lo, hi]");
      r[{var, *s}] = {bounds[0].get<double>(), bounds[1].get<double>()};
    }
  }
  return r;
}

inline std::vector<Predicate> extract_path(const TreeEnsemble& ens, int tree, int leaf) {
  if (tree < 0 || static_cast<std::size_t>(tree) >= ens.trees.size())
    throw Error("unknown tree index " + std::to_string(tree));
  std::vector<Predicate> out;
  for (const auto& step : ens.trees[tree].path_to(leaf)) {
    const auto& name = ens.feature_names[static_cast<std::size_t>(step.feature)];
    auto pos = name.rfind("__");
    Predicate p;
    p.feature = step.feature;
    p.threshold = step.threshold;
    p.op = step.went_left ? Op::kLessEq : Op::kGreater;
    std::optional<Stat> s;
    if (pos != std::string::npos) s = parse_stat(name.substr(pos + 2));
    if (s) {
      p.variable = name.substr(0, pos);
      p.stat = *s;
    } else {
      // Feature names outside the summary layout fall back to its column position.
      p.variable = name;
      p.stat = static_cast<Stat>(step.feature % kNumStats);
    }
    out.push_back(std::move(p));
  }
  return out;
}

struct CanonicalPath {
  std::vector<Predicate> predicates;
  bool vacuous = false;  // no feature vector in the feasible range satisfies it
};

// Tightest bound per (variable, statistic, direction); range restatements dropped;
// output in first-appearance order of each (variable, statistic, direction).
inline CanonicalPath canonicalize(const std::vector<Predicate>& raw, const RangeMap* ranges = nullptr) {
  using Key = std::tuple<std::string, Stat, Op>;
  std::vector<Key> order;
  std::map<Key, Predicate> tightest;
  for (const auto& p : raw) {
    Key k{p.variable, p.stat, p.op};
    auto it = tightest.find(k);
    if (it == tightest.end()) {
      order.push_back(k);
      tightest.emplace(k, p);
    } else if (p.op == Op::kGreater ? p.threshold > it->second.threshold : p.threshold < it->second.threshold) {
      it->second = p;
    }
  }
  CanonicalPath out;
  for (const auto& k : order) {
    const auto& p = tightest.at(k);
    if (ranges) {
      auto r = ranges->find({p.variable, p.stat});
      if (r != ranges->end()) {
        if (p.op == Op::kLessEq && p.threshold >= r->second.hi) continue;
        if (p.op == Op::kGreater && p.threshold < r->second.lo) continue;
      }
    }
    out.predicates.push_back(p);
  }
  // Empty when the bounds cross each other or fall outside the feasible range,
  // so the flag survives dropping a range restatement.
  for (const auto& [k, p] : tightest) {
    if (ranges) {
      auto r = ranges->find({p.variable, p.stat});
      if (r != ranges->end() &&
          (p.op == Op::kGreater ? p.threshold >= r->second.hi : p.threshold < r->second.lo))
        out.vacuous = true;
    }
    if (p.op != Op::kGreater) continue;
    auto up = tightest.find(Key{p.variable, p.stat, Op::kLessEq});
    if (up != tightest.end() && p.threshold >= up->second.threshold) out.vacuous = true;
  }
  return out;
}

// ---- rendering ------------------------------------------------------------

inline const char* stat_phrase(Stat s) {
  switch (s) {
    case Stat::kLast: return "last";
    case Stat::kMean: return "mean";
    case Stat::kStd: return "standard deviation of";
    case Stat::kMin: return "minimum";
    case Stat::kMax: return "maximum";
    case Stat::kCount: return "count of";
    case Stat::kDelta: return "net change in";
    case Stat::kTsLastGap: return "time since last";
    case Stat::kMissing: return "missingness of";
  }
  return "";
}

// Hours since admission as HH:MM, rounded to the minute.
inline std::string format_clock(double hours) {
  long long minutes = std::llround(hours * 60.0);
  bool neg = minutes < 0;
  if (neg) minutes = -minutes;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%02lld:%02lld", neg ? "-" : "", minutes / 60, minutes % 60);
  return buf;
}

inline std::string render_clause(const Predicate& p) {
  return std::string(stat_phrase(p.stat)) + " " + p.variable +
         (p.op == Op::kGreater ? " is higher than " : " is at most ") + detail::format_fixed(p.threshold, 4);
}

// Clause list without the time header.
inline std::string render_body(const std::vector<Predicate>& preds) {
  if (preds.empty()) return "(no conditions)";
  std::string out;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (i) out += "; ";
    out += render_clause(preds[i]);
  }
  return out;
}

inline std::string render(const std::vector<Predicate>& preds, double t, double w) {
  return "From " + format_clock(t - w) + " to " + format_clock(t) + ": " + render_body(preds) + ".";
}

inline double leaf_score(double p_leaf, double n_leaf, double p0) {
  return std::log1p(n_leaf) * std::abs(p_leaf - p0);
}

inline std::size_t whitespace_tokens(std::string_view s) {
  std::size_t n = 0;
  bool in = false;
  for (char c : s) {
    bool ws = c == ' ' || c == '\t' || c == '\n' || c == '\r';
    if (!ws && !in) ++n;
    in = !ws;
  }
  return n;
}

// ---- glosses --------------------------------------------------------------

struct GlossResult {
  int g = 0;
  std::optional<std::string> gloss;
  bool operator==(const GlossResult&) const = default;
};

struct GlossQuery {
  std::string ensemble_id;
  int tree = 0;
  int leaf = 0;
  const std::vector<Predicate>* predicates = nullptr;
  std::string pred_text;
  std::string task_description;
};

class GlossProvider {
 public:
  virtual ~GlossProvider() = default;
  virtual GlossResult annotate(const GlossQuery& q) = 0;
  virtual std::string name() const = 0;
};

class NullGlosser final : public GlossProvider {
 public:
  GlossResult annotate(const GlossQuery&) override { return {}; }
  std::string name() const override { return "null"; }
};

// Deterministic phrase table keyed by (variable, statistic, direction). An entry
// applies when the predicate's threshold is on the abnormal side of `cutoff`.
class TemplateGlosser final : public GlossProvider {
 public:
  struct Entry {
    std::string variable;
    std::vector<Stat> stats;
    Op op;
    double cutoff;
    std::string phrase;
  };

  explicit TemplateGlosser(std::vector<Entry> table) : table_(std::move(table)) {}

  // Phrases for the synthetic vitals/labs vocabulary.
  static TemplateGlosser default_table() {
    using S = Stat;
    const std::vector<S> level{S::kLast, S::kMean, S::kMin, S::kMax};
    return TemplateGlosser({
        {"MAP", level, Op::kLessEq, 65.0, "hypotension"},
        {"SBP", level, Op::kLessEq, 90.0, "hypotension"},
        {"HR", level, Op::kGreater, 100.0, "tachycardia"},
        {"RR", level, Op::kGreater, 22.0, "tachypnea"},
        {"Temp", level, Op::kGreater, 38.0, "fever"},
        {"SpO2", level, Op::kLessEq, 92.0, "hypoxemia"},
        {"Lactate", level, Op::kGreater, 2.0, "elevated lactate"},
        {"WBC", level, Op::kGreater, 12.0, "leukocytosis"},
        {"Creatinine", level, Op::kGreater, 1.5, "impaired renal function"},
        {"GCS", level, Op::kLessEq, 12.0, "impaired consciousness"},
    });
  }

  GlossResult annotate(const GlossQuery& q) override {
    if (!q.predicates) return {};
    std::vector<std::string> phrases;
    for (const auto& p : *q.predicates) {
      for (const auto& e : table_) {
        if (e.variable != p.variable || e.op != p.op) continue;
        if (std::find(e.stats.begin(), e.stats.end(), p.stat) == e.stats.end()) continue;
        bool abnormal = e.op == Op::kGreater ? p.threshold >= e.cutoff : p.threshold <= e.cutoff;
        if (abnormal && std::find(phrases.begin(), phrases.end(), e.phrase) == phrases.end())
          phrases.push_back(e.phrase);
      }
    }
    if (phrases.empty()) return {};
    std::string s = "compatible with ";
    for (std::size_t i = 0; i < phrases.size(); ++i) {
      if (i) s += phrases.size() == 2 ? " and " : (i + 1 == phrases.size() ? ", and " : ", ");
      s += phrases[i];
    }
    return {1, s + "."};
  }
  std::string name() const override { return "template"; }

 private:
  std::vector<Entry> table_;
};

// Reads a pre-built annotation cache. Each JSONL line (or array element) holds
// {"ensemble", "tree", "leaf", "g", "gloss"}; the annotation part is the strict
// {"g": 0|1, "gloss": "<empty if g=0>"} object.
class ExternalGlosser final : public GlossProvider {
 public:
  explicit ExternalGlosser(const std::string& path) { load(detail::read_file(path), path); }
  static ExternalGlosser from_string(const std::string& content) { return ExternalGlosser(content, 0); }

  GlossResult annotate(const GlossQuery& q) override {
    auto it = entries_.find({q.ensemble_id, q.tree, q.leaf});
    if (it == entries_.end()) {
      ++misses_;
      return {};
    }
    return it->second;
  }
  std::string name() const override { return "external"; }
  std::size_t misses() const { return misses_; }
  std::size_t size() const { return entries_.size(); }

 private:
  ExternalGlosser(const std::string& content, int) { load(content, "<gloss cache>"); }

  void add(const nlohmann::json& e, const std::string& src, std::size_t line) {
    try {
      int g = e.at("g").get<int>();
      std::string gloss = e.at("gloss").get<std::string>();
      if (g != 0 && g != 1) throw Error("g must be 0 or 1");
      if ((g == 1) == gloss.empty()) throw Error("gloss must be non-empty exactly when g = 1");
      GlossResult r{g, g ? std::optional<std::string>(gloss) : std::nullopt};
      entries_[{e.at("ensemble").get<std::string>(), e.at("tree").get<int>(), e.at("leaf").get<int>()}] = r;
    } catch (const nlohmann::json::exception& ex) {
      throw ParseError(src, line, std::string("bad gloss entry: ") + ex.what());
    } catch (const Error& ex) {
      throw ParseError(src, line, ex.what());
    }
  }

  void load(const std::string& content, const std::string& src) {
    auto first = content.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && content[first] == '[') {
      auto arr = nlohmann::json::parse(content);
      std::size_t i = 0;
      for (const auto& e : arr) add(e, src, ++i);
      return;
    }
    std::istringstream in(content);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      nlohmann::json e;
      try {
        e = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& ex) {
        throw ParseError(src, lineno, std::string("malformed JSON: ") + ex.what());
      }
      add(e, src, lineno);
    }
  }

  std::map<std::tuple<std::string, int, int>, GlossResult> entries_;
  std::size_t misses_ = 0;
};

// At most one provider call per (ensemble, tree, leaf); safe to share across threads.
class GlossCache {
 public:
  explicit GlossCache(GlossProvider& provider) : provider_(provider) {}

  GlossResult lookup(const GlossQuery& q) {
    std::lock_guard lock(mu_);
    auto key = std::make_tuple(q.ensemble_id, q.tree, q.leaf);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    ++provider_calls_;
    GlossResult r = provider_.annotate(q);
    if (r.g == 0) r.gloss.reset();
    if (r.g == 1 && (!r.gloss || r.gloss->empty())) r = {};
    cache_.emplace(key, r);
    return r;
  }

  std::size_t provider_calls() const { return provider_calls_; }

 private:
  GlossProvider& provider_;
  std::mutex mu_;
  std::map<std::tuple<std::string, int, int>, GlossResult> cache_;
  std::size_t provider_calls_ = 0;
};

inline GlossResult gloss_lookup(GlossCache& cache, const std::string& ensemble_id, int tree, int leaf,
                                const std::string& pred_text, const std::string& task_description,
                                const std::vector<Predicate>* predicates = nullptr) {
  return cache.lookup({ensemble_id, tree, leaf, predicates, pred_text, task_description});
}

// ---- evidence units -------------------------------------------------------

struct SourceTuple {
  std::string patient_id;
  double t = 0.0;
  double w = 0.0;
  int tree = 0;
  int leaf = 0;
  bool operator==(const SourceTuple&) const = default;
};

// Assembly order: source time, window size, tree, leaf.
inline bool source_less(const SourceTuple& a, const SourceTuple& b) {
  return std::tie(a.t, a.w, a.tree, a.leaf) < std::tie(b.t, b.w, b.tree, b.leaf);
}

struct EvidenceUnit {
  SourceTuple source;
  std::vector<Predicate> predicates;  // canonical
  std::string pred_text;
  int g = 0;
  std::optional<std::string> gloss;
  double p_leaf = 0.0;
  std::size_t n_leaf = 0;
  double leaf_score = 0.0;
  std::size_t subword_count = 0;

  std::string text() const { return g == 1 && gloss ? pred_text + " cg: " + *gloss : pred_text; }
};

inline std::string ensemble_id(double w) { return "W" + detail::format_shortest(w); }

// One cached record per (ensemble, tree, leaf).
struct LeafRecord {
  std::string ensemble;
  double window = 0.0;
  int tree = 0;
  int leaf = 0;
  std::vector<Predicate> predicates;
  bool vacuous = false;
  std::string body;  // clause text without the time header
  GlossResult gloss;
  double p_leaf = 0.0;
  std::size_t n_leaf = 0;
};

struct EvidenceOptions {
  std::size_t top_m = 5;
  double base_rate = 0.0;
  std::string task_description;
  RangeMap declared_ranges;
};

class EvidenceMapper {
 public:
  EvidenceMapper(const std::map<double, TreeEnsemble>& ensembles, const std::vector<std::string>& variables,
                 GlossCache& gloss, EvidenceOptions opts)
      : ensembles_(ensembles), variables_(variables), gloss_(gloss), opts_(std::move(opts)) {
    if (opts_.top_m < 1) throw Error("top-M must be >= 1");
  }

  const LeafRecord& leaf_record(double w, int tree, int leaf) {
    auto key = std::make_tuple(w, tree, leaf);
    auto it = leaves_.find(key);
    if (it != leaves_.end()) return it->second;
    const auto& ens = ensemble(w);
    const auto& node = ens.leaf(tree, leaf);
    RangeMap ranges = structural_ranges(variables_, w);
    merge_ranges(ranges, opts_.declared_ranges);
    auto canon = canonicalize(extract_path(ens, tree, leaf), &ranges);
    LeafRecord rec;
    rec.ensemble = ensemble_id(w);
    rec.window = w;
    rec.tree = tree;
    rec.leaf = leaf;
    rec.predicates = std::move(canon.predicates);
    rec.vacuous = canon.vacuous;
    rec.body = render_body(rec.predicates);
    rec.p_leaf = node.p_leaf;
    rec.n_leaf = node.n_leaf;
    if (!rec.vacuous)
      rec.gloss = gloss_lookup(gloss_, rec.ensemble, tree, leaf, rec.body, opts_.task_description, &rec.predicates);
    return leaves_.emplace(key, std::move(rec)).first->second;
  }

  EvidenceUnit make_unit(const std::string& patient_id, const WindowSpec& win, int tree, int leaf) {
    const auto& rec = leaf_record(win.width, tree, leaf);
    EvidenceUnit u;
    u.source = {patient_id, win.end, win.width, tree, leaf};
    u.predicates = rec.predicates;
    u.pred_text = render(rec.predicates, win.end, win.width);
    u.g = rec.gloss.g;
    u.gloss = rec.gloss.gloss;
    u.p_leaf = rec.p_leaf;
    u.n_leaf = rec.n_leaf;
    u.leaf_score = leaf_score(rec.p_leaf, static_cast<double>(rec.n_leaf), opts_.base_rate);
    u.subword_count = whitespace_tokens(u.text());
    return u;
  }

  // Top-M non-vacuous activated leaves of one summary row.
  std::vector<EvidenceUnit> units_for_row(const SummaryRow& row) {
    const auto& ens = ensemble(row.window.width);
    struct Scored {
      double score;
      int tree;
      int leaf;
    };
    std::vector<Scored> scored;
    for (const auto& hit : route(ens, row.stats)) {
      const auto& rec = leaf_record(row.window.width, hit.tree, hit.leaf);
      if (rec.vacuous) continue;
      scored.push_back({leaf_score(rec.p_leaf, static_cast<double>(rec.n_leaf), opts_.base_rate), hit.tree, hit.leaf});
    }
    std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.tree != b.tree) return a.tree < b.tree;
      return a.leaf < b.leaf;
    });
    if (scored.size() > opts_.top_m) scored.resize(opts_.top_m);
    std::vector<EvidenceUnit> out;
    for (const auto& s : scored) out.push_back(make_unit(row.patient_id, row.window, s.tree, s.leaf));
    return out;
  }

  const std::map<std::tuple<double, int, int>, LeafRecord>& leaf_cache() const { return leaves_; }
  const EvidenceOptions& options() const { return opts_; }

  const TreeEnsemble& ensemble(double w) const {
    auto it = ensembles_.find(w);
    if (it == ensembles_.end()) throw Error("no ensemble for window " + detail::format_shortest(w));
    return it->second;
  }

 private:
  const std::map<double, TreeEnsemble>& ensembles_;
  std::vector<std::string> variables_;
  GlossCache& gloss_;
  EvidenceOptions opts_;
  std::map<std::tuple<double, int, int>, LeafRecord> leaves_;
};

// Candidate pool per patient, each sorted by (t, W, tree, leaf).
using CandidatePools = std::map<std::string, std::vector<EvidenceUnit>>;

inline CandidatePools build_candidates(const SummaryBank& bank, EvidenceMapper& mapper) {
  CandidatePools pools;
  for (const auto& row : bank.rows) {
    auto& pool = pools[row.patient_id];
    for (auto& u : mapper.units_for_row(row)) pool.push_back(std::move(u));
  }
  for (auto& [id, pool] : pools)
    std::stable_sort(pool.begin(), pool.end(),
                     [](const EvidenceUnit& a, const EvidenceUnit& b) { return source_less(a.source, b.source); });
  return pools;
}

// ---- persistence ----------------------------------------------------------

inline nlohmann::ordered_json predicate_to_json(const Predicate& p) {
  return {{"variable", p.variable},
          {"statistic", stat_name(p.stat)},
          {"op", op_symbol(p.op)},
          {"threshold", p.threshold},
          {"feature", p.feature}};
}

inline Predicate predicate_from_json(const nlohmann::json& j) {
  Predicate p;
  p.variable = j.at("variable").get<std::string>();
  auto s = parse_stat(j.at("statistic").get<std::string>());
  if (!s) throw Error("unknown statistic in predicate");
  p.stat = *s;
  auto op = j.at("op").get<std::string>();
  if (op != ">" && op != "<=") throw Error("unknown predicate op " + op);
  p.op = op == ">" ? Op::kGreater : Op::kLessEq;
  p.threshold = j.at("threshold").get<double>();
  p.feature = j.value("feature", -1);
  return p;
}

inline std::string leaf_cache_to_jsonl(const EvidenceMapper& mapper) {
  std::string out;
  for (const auto& [key, rec] : mapper.leaf_cache()) {
    nlohmann::ordered_json j;
    j["ensemble"] = rec.ensemble;
    j["tree"] = rec.tree;
    j["leaf"] = rec.leaf;
    auto preds = nlohmann::ordered_json::array();
    for (const auto& p : rec.predicates) preds.push_back(predicate_to_json(p));
    j["predicates"] = std::move(preds);
    j["pred_text"] = rec.body;
    j["vacuous"] = rec.vacuous;
    j["g"] = rec.gloss.g;
    j["gloss"] = rec.gloss.gloss.value_or("");
    j["p_leaf"] = rec.p_leaf;
    j["n_leaf"] = rec.n_leaf;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline nlohmann::ordered_json unit_to_json(const EvidenceUnit& u) {
  nlohmann::ordered_json j;
  j["t"] = u.source.t;
  j["W"] = u.source.w;
  j["tree"] = u.source.tree;
  j["leaf"] = u.source.leaf;
  auto preds = nlohmann::ordered_json::array();
  for (const auto& p : u.predicates) preds.push_back(predicate_to_json(p));
  j["predicates"] = std::move(preds);
  j["pred_text"] = u.pred_text;
  j["g"] = u.g;
  j["gloss"] = u.gloss.value_or("");
  j["p_leaf"] = u.p_leaf;
  j["n_leaf"] = u.n_leaf;
  j["leaf_score"] = u.leaf_score;
  j["subword_count"] = u.subword_count;
  return j;
}

inline EvidenceUnit unit_from_json(const nlohmann::json& j, const std::string& patient_id) {
  EvidenceUnit u;
  u.source = {patient_id, j.at("t").get<double>(), j.at("W").get<double>(), j.at("tree").get<int>(),
              j.at("leaf").get<int>()};
  for (const auto& p : j.at("predicates")) u.predicates.push_back(predicate_from_json(p));
  u.pred_text = j.at("pred_text").get<std::string>();
  u.g = j.at("g").get<int>();
  auto gloss = j.at("gloss").get<std::string>();
  if (u.g == 1) u.gloss = gloss;
  u.p_leaf = j.at("p_leaf").get<double>();
  u.n_leaf = j.at("n_leaf").get<std::size_t>();
  u.leaf_score = j.at("leaf_score").get<double>();
  u.subword_count = j.at("subword_count").get<std::size_t>();
  return u;
}

inline std::string pools_to_jsonl(const CandidatePools& pools) {
  std::string out;
  for (const auto& [id, pool] : pools) {
    nlohmann::ordered_json j;
    j["id"] = id;
    auto units = nlohmann::ordered_json::array();
    for (const auto& u : pool) units.push_back(unit_to_json(u));
    j["units"] = std::move(units);
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline CandidatePools pools_from_jsonl(std::istream& in, const std::string& source = "<pools>") {
  CandidatePools pools;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      auto id = j.at("id").get<std::string>();
      auto& pool = pools[id];
      for (const auto& u : j.at("units")) pool.push_back(unit_from_json(u, id));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source, lineno, e.what());
    }
  }
  return pools;
}

}  // namespace treetext
