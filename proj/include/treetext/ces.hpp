#pragma once

// Compact evidence selector: per-candidate tokens, a set Transformer that
// scores them, and budgeted assembly of the selected subset.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "treetext/common.hpp"
#include "treetext/embed.hpp"
#include "treetext/nn.hpp"
#include "treetext/tem.hpp"
#include "treetext/tensor_io.hpp"

namespace treetext {

inline constexpr int kMetaDim = 8;

// Metadata column order.
enum MetaField : int {
  kRecency = 0,
  kLeafScore,
  kAbsLeafDev,
  kLeafDirection,
  kLogLeafSupport,
  kWindowNorm,
  kLogTextLength,
  kHasGloss,
};

struct TokenContext {
  double horizon = 48.0;
  double max_window = 48.0;
  double base_rate = 0.0;
};

// Selector-side input groups that can be zeroed for ablations.
struct SelectorInputMask {
  bool embedding = false;
  bool leaf_stats = false;  // leaf score, deviation, direction, support
  bool gloss = false;
};

struct SelectorTokens {
  nn::Mat embed;  // N x E
  nn::Mat meta;   // N x 8
  std::size_t size() const { return static_cast<std::size_t>(meta.rows()); }
};

inline std::array<double, kMetaDim> unit_metadata(const EvidenceUnit& u, const TokenContext& ctx) {
  std::array<double, kMetaDim> m{};
  m[kRecency] = u.source.t / ctx.horizon;
  m[kLeafScore] = u.leaf_score;
  m[kAbsLeafDev] = std::abs(u.p_leaf - ctx.base_rate);
  m[kLeafDirection] = u.p_leaf - ctx.base_rate;
  m[kLogLeafSupport] = std::log1p(static_cast<double>(u.n_leaf));
  m[kWindowNorm] = u.source.w / ctx.max_window;
  m[kLogTextLength] = std::log1p(static_cast<double>(u.subword_count));
  m[kHasGloss] = u.g == 1 ? 1.0 : 0.0;
  return m;
}

inline SelectorTokens build_tokens(std::span<const EvidenceUnit> pool, const TokenContext& ctx,
                                   EmbeddingCache& cache, const SelectorInputMask& mask = {}) {
  if (pool.empty()) throw Error("cannot build selector tokens for an empty pool");
  const auto n = static_cast<Eigen::Index>(pool.size());
  SelectorTokens tok;
  tok.embed = nn::Mat::Zero(n, cache.dim());
  tok.meta.resize(n, kMetaDim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& u = pool[static_cast<std::size_t>(i)];
    if (!mask.embedding) tok.embed.row(i) = cache.get(u.text()).transpose();
    auto m = unit_metadata(u, ctx);
    if (mask.leaf_stats)
      for (int f : {kLeafScore, kAbsLeafDev, kLeafDirection, kLogLeafSupport}) m[f] = 0.0;
    if (mask.gloss) m[kHasGloss] = 0.0;
    for (int f = 0; f < kMetaDim; ++f) tok.meta(i, f) = m[f];
  }
  return tok;
}

struct SelectorConfig {
  int embed_dim = 256;
  int proj_dim = 64;
  int model_dim = 128;
  int heads = 4;
  int ff_dim = 512;
  int layers = 2;
  // A zero gate starts every unit at p = 0.5, so the first ranking is learned
  // rather than an artifact of the random initialization.
  bool zero_gate = true;
  std::uint64_t seed = 0;
};

class SelectorPolicy {
 public:
  struct Trace {
    nn::Mat u, x0;
    std::vector<nn::EncoderLayer::Cache> layers;
    nn::LayerNorm::Cache final_ln;
    nn::Mat hidden;
    nn::Vec margins;
  };

  explicit SelectorPolicy(const SelectorConfig& cfg = {}) : cfg_(cfg) {
    nn::Gaussian g(cfg.seed ^ 0x5e1ec7ULL);
    proj_ = nn::Linear("proj", cfg.embed_dim, cfg.proj_dim, g, false);
    input_ = nn::Linear("input", cfg.proj_dim + kMetaDim, cfg.model_dim, g);
    for (int l = 0; l < cfg.layers; ++l)
      layers_.emplace_back("layer" + std::to_string(l), cfg.model_dim, cfg.heads, cfg.ff_dim, g);
    final_ln_ = nn::LayerNorm("final_ln", cfg.model_dim);
    gate_ = nn::Linear("gate", cfg.model_dim, 1, g);
    if (cfg.zero_gate) gate_.weight.value.setZero();
  }

  SelectorPolicy(const SelectorPolicy&) = delete;
  SelectorPolicy& operator=(const SelectorPolicy&) = delete;

  const SelectorConfig& config() const { return cfg_; }

  nn::Vec forward(const SelectorTokens& tok, Trace* trace = nullptr) const {
    if (tok.size() == 0) throw Error("selector forward needs at least one token");
    if (tok.embed.cols() != cfg_.embed_dim) throw Error("selector embedding dimension mismatch");
    Trace local;
    Trace& t = trace ? *trace : local;
    t.u.resize(tok.meta.rows(), cfg_.proj_dim + kMetaDim);
    t.u.leftCols(cfg_.proj_dim) = proj_.forward(tok.embed);
    t.u.rightCols(kMetaDim) = tok.meta;
    t.x0 = input_.forward(t.u);
    t.layers.resize(layers_.size());
    nn::Mat x = t.x0;
    for (std::size_t l = 0; l < layers_.size(); ++l) x = layers_[l].forward(x, t.layers[l]);
    t.hidden = final_ln_.forward(x, t.final_ln);
    t.margins = gate_.forward(t.hidden).col(0);
    if (!t.margins.allFinite()) throw Error("selector produced non-finite margins (training diverged)");
    return t.margins;
  }

  // Accumulates parameter gradients for dL/dmargins.
  void backward(const SelectorTokens& tok, const Trace& t, const nn::Vec& dmargins) {
    nn::Mat dh = gate_.backward(nn::Mat(dmargins), t.hidden);
    nn::Mat dx = final_ln_.backward(dh, t.final_ln);
    for (std::size_t l = layers_.size(); l-- > 0;) dx = layers_[l].backward(dx, t.layers[l]);
    nn::Mat du = input_.backward(dx, t.u);
    proj_.backward(du.leftCols(cfg_.proj_dim), tok.embed);
  }

  std::vector<nn::Param*> params() {
    std::vector<nn::Param*> out;
    proj_.collect(out);
    input_.collect(out);
    for (auto& l : layers_) l.collect(out);
    final_ln_.collect(out);
    gate_.collect(out);
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  TensorArchive to_archive() {
    TensorArchive a;
    a.meta = {{"kind", "selector"},
              {"embed_dim", cfg_.embed_dim},
              {"proj_dim", cfg_.proj_dim},
              {"model_dim", cfg_.model_dim},
              {"heads", cfg_.heads},
              {"ff_dim", cfg_.ff_dim},
              {"layers", cfg_.layers},
              {"seed", cfg_.seed}};
    for (auto* p : params())
      a.put(p->name, {p->value.rows(), p->value.cols()},
            std::vector<double>(p->value.data(), p->value.data() + p->value.size()));
    return a;
  }

  static SelectorConfig config_from_archive(const TensorArchive& a) {
    if (a.meta.value("kind", "") != "selector") throw Error("checkpoint is not a selector");
    SelectorConfig c;
    c.embed_dim = a.meta.at("embed_dim").get<int>();
    c.proj_dim = a.meta.at("proj_dim").get<int>();
    c.model_dim = a.meta.at("model_dim").get<int>();
    c.heads = a.meta.at("heads").get<int>();
    c.ff_dim = a.meta.at("ff_dim").get<int>();
    c.layers = a.meta.at("layers").get<int>();
    c.seed = a.meta.at("seed").get<std::uint64_t>();
    return c;
  }

  void load_archive(const TensorArchive& a) {
    for (auto* p : params()) {
      const auto& t = a.get(p->name);
      if (t.data.size() != static_cast<std::size_t>(p->value.size())) throw Error("shape mismatch for " + p->name);
      std::copy(t.data.begin(), t.data.end(), p->value.data());
    }
  }

 private:
  SelectorConfig cfg_;
  nn::Linear proj_;
  nn::Linear input_;
  std::vector<nn::EncoderLayer> layers_;
  nn::LayerNorm final_ln_;
  nn::Linear gate_;
};

struct GateOutput {
  nn::Vec margins;
  nn::Vec probs;
};

inline GateOutput gate_forward(const SelectorPolicy& policy, const SelectorTokens& tok,
                               SelectorPolicy::Trace* trace = nullptr) {
  GateOutput out;
  out.margins = policy.forward(tok, trace);
  out.probs = out.margins.unaryExpr([](double r) { return detail::sigmoid(r); });
  return out;
}

// ---- assembly ----------------------------------------------------------------

enum class SelectMode { kGreedy, kSampled };

struct SelectionOutcome {
  SelectMode mode = SelectMode::kGreedy;
  std::vector<char> raw_actions;       // greedy 1[r > 0] or Bernoulli draws, before floor/cap
  std::vector<char> actions;           // after floor/cap
  std::vector<std::size_t> selected;   // ascending candidate index
};

// Candidate indices by descending margin; ties by ascending (t, W, tree, leaf).
inline std::vector<std::size_t> margin_order(std::span<const double> margins, std::span<const SourceTuple> keys) {
  std::vector<std::size_t> idx(margins.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (margins[a] != margins[b]) return margins[a] > margins[b];
    if (!keys.empty()) return source_less(keys[a], keys[b]);
    return a < b;
  });
  return idx;
}

// Minimum-count floor then top-K cap, both by margin order.
inline void apply_floor_and_cap(SelectionOutcome& out, std::span<const double> margins,
                                std::span<const SourceTuple> keys, std::size_t k, std::size_t k_min) {
  const std::size_t n = margins.size();
  out.actions = out.raw_actions;
  auto order = margin_order(margins, keys);
  std::size_t count = static_cast<std::size_t>(std::count(out.actions.begin(), out.actions.end(), 1));
  const std::size_t floor = std::min(k_min, n);
  for (std::size_t pos = 0; count < floor && pos < n; ++pos) {
    if (!out.actions[order[pos]]) {
      out.actions[order[pos]] = 1;
      ++count;
    }
  }
  if (count > k) {
    std::size_t kept = 0;
    for (std::size_t i : order) {
      if (!out.actions[i]) continue;
      if (kept < k) {
        ++kept;
      } else {
        out.actions[i] = 0;
      }
    }
  }
  out.selected.clear();
  for (std::size_t i = 0; i < n; ++i)
    if (out.actions[i]) out.selected.push_back(i);
}

template <typename Rng = std::mt19937_64>
SelectionOutcome assemble(std::span<const double> margins, std::span<const SourceTuple> keys, SelectMode mode,
                          std::size_t k, std::size_t k_min, Rng* rng = nullptr) {
  if (k < k_min) throw Error("budget K must be >= K_min");
  if (!keys.empty() && keys.size() != margins.size()) throw Error("tie-break keys do not match margins");
  SelectionOutcome out;
  out.mode = mode;
  out.raw_actions.resize(margins.size());
  for (std::size_t i = 0; i < margins.size(); ++i) {
    if (mode == SelectMode::kGreedy) {
      out.raw_actions[i] = margins[i] > 0 ? 1 : 0;
    } else {
      if (!rng) throw Error("sampled assembly needs a random generator");
      out.raw_actions[i] = detail::unit_interval((*rng)()) < detail::sigmoid(margins[i]) ? 1 : 0;
    }
  }
  apply_floor_and_cap(out, margins, keys, k, k_min);
  return out;
}

inline std::vector<SourceTuple> source_keys(std::span<const EvidenceUnit> pool) {
  std::vector<SourceTuple> keys;
  keys.reserve(pool.size());
  for (const auto& u : pool) keys.push_back(u.source);
  return keys;
}

}  // namespace treetext
