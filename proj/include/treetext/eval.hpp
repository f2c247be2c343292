#pragma once

// Matched-budget selector sweeps, selection enrichment, tree-only
// aggregation controls and per-patient evidence cards.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "treetext/boost.hpp"
#include "treetext/ces.hpp"
#include "treetext/common.hpp"
#include "treetext/metrics.hpp"
#include "treetext/reader.hpp"
#include "treetext/train.hpp"
#include "treetext/windows.hpp"

namespace treetext {

enum class SelectorKind { kCesTop, kLeafScoreTop, kRecencyTop, kRandomTop, kCesBottom };

inline const char* selector_name(SelectorKind k) {
  switch (k) {
    case SelectorKind::kCesTop: return "ces_top";
    case SelectorKind::kLeafScoreTop: return "leaf_score_top";
    case SelectorKind::kRecencyTop: return "recency_top";
    case SelectorKind::kRandomTop: return "random_top";
    case SelectorKind::kCesBottom: return "ces_bottom";
  }
  return "?";
}

inline std::optional<SelectorKind> parse_selector(std::string_view s) {
  for (auto k : {SelectorKind::kCesTop, SelectorKind::kLeafScoreTop, SelectorKind::kRecencyTop,
                 SelectorKind::kRandomTop, SelectorKind::kCesBottom})
    if (s == selector_name(k)) return k;
  return std::nullopt;
}

// Exactly min(k, N) pool indices in the selector's preference order.
inline std::vector<std::size_t> pick_units(SelectorKind kind, const PatientExample& ex,
                                           std::span<const double> margins, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw Error("budget K must be positive");
  const auto& pool = *ex.pool;
  std::vector<std::size_t> idx(pool.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto by_source = [&](std::size_t a, std::size_t b) { return source_less(pool[a].source, pool[b].source); };
  switch (kind) {
    case SelectorKind::kCesTop:
      idx = margin_order(margins, ex.keys);
      break;
    case SelectorKind::kCesBottom:
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (margins[a] != margins[b]) return margins[a] < margins[b];
        return by_source(a, b);
      });
      break;
    case SelectorKind::kLeafScoreTop:
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (pool[a].leaf_score != pool[b].leaf_score) return pool[a].leaf_score > pool[b].leaf_score;
        return by_source(a, b);
      });
      break;
    case SelectorKind::kRecencyTop:
      std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        const auto& x = pool[a].source;
        const auto& y = pool[b].source;
        if (x.t != y.t) return x.t > y.t;
        if (x.w != y.w) return x.w > y.w;
        return by_source(a, b);
      });
      break;
    case SelectorKind::kRandomTop: {
      std::mt19937_64 rng(detail::splitmix64(seed ^ detail::fnv1a(ex.id)));
      for (std::size_t i = idx.size(); i > 1; --i) {
        auto j = static_cast<std::size_t>(detail::unit_interval(rng()) * static_cast<double>(i));
        std::swap(idx[i - 1], idx[std::min(j, i - 1)]);
      }
      break;
    }
  }
  if (idx.size() > k) idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct SweepCell {
  std::string selector;
  std::size_t k = 0;
  double auroc = 0.0;
  double auprc = 0.0;
  double mean_selected = 0.0;
};

inline std::vector<SweepCell> budget_sweep(const SelectorPolicy& policy, const HashedReader& reader,
                                           std::span<const PatientExample> examples,
                                           std::span<const SelectorKind> selectors, std::span<const std::size_t> ks,
                                           std::uint64_t seed, std::size_t max_len = kDefaultMaxLength) {
  std::vector<std::vector<double>> margins;
  margins.reserve(examples.size());
  for (const auto& ex : examples) margins.push_back(patient_margins(policy, ex));
  std::vector<int> labels;
  for (const auto& ex : examples) labels.push_back(ex.label);
  std::vector<SweepCell> out;
  for (auto kind : selectors) {
    for (std::size_t k : ks) {
      std::vector<double> scores;
      double total = 0;
      for (std::size_t i = 0; i < examples.size(); ++i) {
        const auto& ex = examples[i];
        std::vector<std::size_t> sel;
        if (ex.pool_size() > 0) sel = pick_units(kind, ex, margins[i], k, seed);
        total += static_cast<double>(sel.size());
        scores.push_back(reader.predict(assemble_selected(ex, sel, max_len)).prob);
      }
      out.push_back({selector_name(kind), k, auroc(scores, labels), auprc(scores, labels),
                     total / static_cast<double>(examples.size())});
    }
  }
  return out;
}

inline std::string sweep_to_csv(std::span<const SweepCell> cells) {
  std::string s = "selector,K,auroc,auprc,mean_selected\n";
  for (const auto& c : cells)
    s += c.selector + "," + std::to_string(c.k) + "," + detail::format_shortest(c.auroc) + "," +
         detail::format_shortest(c.auprc) + "," + detail::format_shortest(c.mean_selected) + "\n";
  return s;
}

// ---- enrichment -------------------------------------------------------------

using Attribute = std::function<std::string(const EvidenceUnit&)>;

inline std::string recency_bin(const EvidenceUnit& u, double horizon) {
  const double r = u.source.t / horizon;
  if (r >= 0.9) return ">=0.9";
  if (r >= 0.6) return "0.6-0.9";
  return "<0.6";
}

struct EnrichmentRow {
  std::string attribute;
  std::string category;
  double p_pool = 0.0;
  double p_sel = 0.0;
  std::optional<double> ratio;  // undefined when p_pool = 0
};

// Pooled category frequencies over all candidates and over all selected units.
// `selections[i]` indexes into `pools[i]`.
inline std::vector<EnrichmentRow> enrichment(std::span<const std::vector<EvidenceUnit>* const> pools,
                                             std::span<const std::vector<std::size_t>> selections,
                                             const std::vector<std::pair<std::string, Attribute>>& attributes,
                                             const std::vector<std::pair<std::string, std::vector<std::string>>>&
                                                 declared_categories = {}) {
  if (pools.size() != selections.size()) throw Error("pools and selections differ in length");
  std::size_t total_sel = 0;
  for (const auto& s : selections) total_sel += s.size();
  if (total_sel == 0) throw Error("enrichment needs at least one selected unit");
  std::vector<EnrichmentRow> out;
  for (const auto& [name, attr] : attributes) {
    std::map<std::string, double> pool_count, sel_count;
    for (const auto& [n, cats] : declared_categories)
      if (n == name)
        for (const auto& c : cats) pool_count[c] += 0;
    double pool_total = 0;
    for (std::size_t i = 0; i < pools.size(); ++i) {
      for (const auto& u : *pools[i]) {
        pool_count[attr(u)] += 1;
        pool_total += 1;
      }
      for (std::size_t j : selections[i]) {
        if (j >= pools[i]->size()) throw Error("selection index outside the candidate pool");
        sel_count[attr((*pools[i])[j])] += 1;
      }
    }
    for (const auto& [c, n] : sel_count) pool_count[c] += 0;
    for (const auto& [c, n] : pool_count) {
      EnrichmentRow r;
      r.attribute = name;
      r.category = c;
      r.p_pool = pool_total > 0 ? n / pool_total : 0.0;
      auto it = sel_count.find(c);
      r.p_sel = (it == sel_count.end() ? 0.0 : it->second) / static_cast<double>(total_sel);
      if (r.p_pool > 0) r.ratio = r.p_sel / r.p_pool;
      out.push_back(r);
    }
  }
  return out;
}

inline std::string enrichment_to_csv(std::span<const EnrichmentRow> rows) {
  std::string s = "attribute,category,p_pool,p_sel,ratio\n";
  for (const auto& r : rows)
    s += r.attribute + "," + r.category + "," + detail::format_shortest(r.p_pool) + "," +
         detail::format_shortest(r.p_sel) + "," + (r.ratio ? detail::format_shortest(*r.ratio) : "undefined") + "\n";
  return s;
}

// ---- tree-only controls -------------------------------------------------------

enum class AggregateMode { kMean, kMax };

inline std::map<std::string, double> xgb_aggregate(const SummaryBank& bank,
                                                   const std::map<double, TreeEnsemble>& ensembles,
                                                   AggregateMode mode) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& row : bank.rows) {
    auto it = ensembles.find(row.window.width);
    if (it == ensembles.end()) continue;
    const double p = predict_proba(it->second, row.stats);
    auto [slot, fresh] = acc.try_emplace(row.patient_id, p, 1);
    if (fresh) continue;
    if (mode == AggregateMode::kMean) {
      slot->second.first += p;
      slot->second.second += 1;
    } else {
      slot->second.first = std::max(slot->second.first, p);
    }
  }
  std::map<std::string, double> out;
  for (const auto& [id, v] : acc)
    out[id] = mode == AggregateMode::kMean ? v.first / static_cast<double>(v.second) : v.first;
  return out;
}

// ---- explain ---------------------------------------------------------------------

struct EvidenceCard {
  SourceTuple source;
  double margin = 0.0;
  std::string pred_text;
  std::optional<std::string> gloss;
  double p_leaf = 0.0;
  std::size_t n_leaf = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = {{"patient", source.patient_id}, {"t", source.t},   {"W", source.w},
                                {"tree", source.tree},          {"leaf", source.leaf}, {"margin", margin},
                                {"evidence", pred_text}};
    if (gloss) j["gloss"] = *gloss;
    j["p_leaf"] = p_leaf;
    j["n_leaf"] = n_leaf;
    return j;
  }

  std::string render() const {
    std::string s = "[t=" + detail::format_shortest(source.t) + "h W=" + detail::format_shortest(source.w) +
                    "h tree=" + std::to_string(source.tree) + " leaf=" + std::to_string(source.leaf) +
                    "] margin " + detail::format_fixed(margin, 4) + "\n  " + pred_text + "\n";
    if (gloss) s += "  cg: " + *gloss + "\n";
    return s;
  }
};

// The `top` highest-margin units of the greedy selection.
inline std::vector<EvidenceCard> explain(const SelectorPolicy& policy, const PatientExample& ex,
                                         const TrainConfig& cfg, std::size_t top) {
  std::vector<EvidenceCard> cards;
  if (ex.pool_size() == 0) return cards;
  auto m = patient_margins(policy, ex);
  auto outcome = assemble<std::mt19937_64>(m, ex.keys, SelectMode::kGreedy, cfg.k, cfg.k_min);
  for (std::size_t i : margin_order(m, ex.keys)) {
    if (cards.size() >= top) break;
    if (!outcome.actions[i]) continue;
    const auto& u = (*ex.pool)[i];
    cards.push_back({u.source, m[i], u.pred_text, u.gloss, u.p_leaf, u.n_leaf});
  }
  return cards;
}

}  // namespace treetext
