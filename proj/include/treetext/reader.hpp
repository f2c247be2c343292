#pragma once

// Evidence reader: static prefix + source-ordered evidence text, encoded by a
// hashed bag of character n-grams and classified by a one-hidden-layer head.
//
// The n-gram embedding table has 2^buckets_log2 logical rows but only rows
// that have received a gradient are stored. An unstored row reads as its
// deterministic initial value, so forward passes never mutate the model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "treetext/common.hpp"
#include "treetext/embed.hpp"
#include "treetext/ingest.hpp"
#include "treetext/nn.hpp"
#include "treetext/tem.hpp"
#include "treetext/tensor_io.hpp"

namespace treetext {

inline std::string render_prefix(const std::vector<std::pair<std::string, StaticValue>>& statics) {
  std::string out;
  for (const auto& [k, v] : statics) out += k + " is " + static_to_string(v) + ". ";
  return out;
}

struct Assembly {
  std::string prefix;
  std::vector<SourceTuple> sources;  // units kept, in assembly order
  std::string joined_text;
  std::size_t tokens = 0;
  bool truncated = false;
};

inline constexpr std::size_t kDefaultMaxLength = 3072;

// Units are sorted by (t, W, tree, leaf) and joined by single spaces after the
// prefix. Whole trailing units are dropped while the whitespace-token count
// exceeds `max_len`.
inline Assembly assemble_input(const std::string& prefix, std::vector<const EvidenceUnit*> units,
                               std::size_t max_len = kDefaultMaxLength) {
  Assembly a;
  a.prefix = prefix;
  std::size_t tokens = whitespace_tokens(prefix);
  if (tokens > max_len) throw Error("static prefix alone exceeds the maximum input length");
  std::stable_sort(units.begin(), units.end(),
                   [](const EvidenceUnit* x, const EvidenceUnit* y) { return source_less(x->source, y->source); });
  a.joined_text = prefix;
  for (const auto* u : units) {
    std::string text = u->text();
    std::size_t n = whitespace_tokens(text);
    if (tokens + n > max_len) {
      a.truncated = true;
      break;
    }
    if (!a.joined_text.empty() && a.joined_text.back() != ' ') a.joined_text += ' ';
    a.joined_text += text;
    tokens += n;
    a.sources.push_back(u->source);
  }
  a.tokens = tokens;
  return a;
}

struct ReaderConfig {
  int dim = 256;
  int hidden = 256;
  int buckets_log2 = 20;
  int min_n = 3;
  int max_n = 5;
  double init_std = 1.0;
  std::uint64_t seed = 0;
};

struct ReaderPrediction {
  double prob = 0.5;
  double loss = 0.0;
};

class HashedReader {
 public:
  // Normalized bucket weights c_b / C of one text, sorted by bucket.
  struct Encoding {
    std::vector<std::pair<std::uint32_t, double>> weights;
  };

  struct Trace {
    Encoding enc;
    nn::Vec pooled;
    nn::Vec hidden;
    double logit = 0.0;
  };

  explicit HashedReader(const ReaderConfig& cfg = {}) : cfg_(cfg) {
    nn::Gaussian g(cfg.seed ^ 0x2eadeULL);
    w1_ = nn::Param("hidden.weight", nn::gaussian_matrix(cfg.hidden, cfg.dim, 1.0 / std::sqrt(double(cfg.dim)), g));
    b1_ = nn::Param("hidden.bias", nn::Mat::Zero(cfg.hidden, 1));
    head_w_ = nn::Param("head.weight", nn::Mat::Zero(cfg.hidden, 1));
    head_b_ = nn::Param("head.bias", nn::Mat::Zero(1, 1));
  }

  HashedReader(const HashedReader&) = delete;
  HashedReader& operator=(const HashedReader&) = delete;

  const ReaderConfig& config() const { return cfg_; }

  Encoding encode(const std::string& text) const {
    std::unordered_map<std::uint32_t, std::uint32_t> counts;
    std::uint64_t total = 0;
    const std::uint64_t mask = (std::uint64_t{1} << cfg_.buckets_log2) - 1;
    for_each_ngram_hash(text, cfg_.min_n, cfg_.max_n, [&](std::uint64_t h) {
      ++counts[static_cast<std::uint32_t>(detail::splitmix64(h) & mask)];
      ++total;
    });
    Encoding e;
    e.weights.reserve(counts.size());
    for (const auto& [b, c] : counts) e.weights.emplace_back(b, static_cast<double>(c) / static_cast<double>(total));
    std::sort(e.weights.begin(), e.weights.end());
    return e;
  }

  // Mean-pooled n-gram embedding f(text).
  nn::Vec features(const Encoding& enc) const {
    nn::Vec f = nn::Vec::Zero(cfg_.dim);
    nn::Vec scratch(cfg_.dim);
    for (const auto& [b, w] : enc.weights) f.noalias() += w * row_value(b, scratch);
    return f;
  }

  double forward(const std::string& text, Trace* trace = nullptr) const {
    Trace local;
    Trace& t = trace ? *trace : local;
    t.enc = encode(text);
    t.pooled = features(t.enc);
    t.hidden = (w1_.value * t.pooled + b1_.value.col(0)).array().tanh();
    t.logit = head_w_.value.col(0).dot(t.hidden) + head_b_.value(0, 0);
    return t.logit;
  }

  ReaderPrediction predict(const Assembly& a, std::optional<int> label = std::nullopt) const {
    double logit = forward(a.joined_text);
    ReaderPrediction p;
    p.prob = detail::sigmoid(logit);
    if (label) p.loss = detail::bce_with_logit(logit, *label);
    return p;
  }

  // Accumulates gradients of a loss whose derivative w.r.t. the logit is `dlogit`.
  void backward(const Trace& t, double dlogit) {
    head_w_.grad.col(0) += dlogit * t.hidden;
    head_b_.grad(0, 0) += dlogit;
    nn::Vec dz = (dlogit * head_w_.value.col(0)).array() * (1.0 - t.hidden.array().square());
    w1_.grad.noalias() += dz * t.pooled.transpose();
    b1_.grad.col(0) += dz;
    nn::Vec dpooled = w1_.value.transpose() * dz;
    for (const auto& [b, w] : t.enc.weights) {
      auto it = row_grads_.find(b);
      if (it == row_grads_.end()) it = row_grads_.emplace(b, nn::Vec::Zero(cfg_.dim)).first;
      it->second.noalias() += w * dpooled;
    }
  }

  std::vector<nn::Param*> dense_params() { return {&w1_, &b1_, &head_w_, &head_b_}; }

  void zero_grad() {
    for (auto* p : dense_params()) p->zero_grad();
    row_grads_.clear();
  }

  // Stored row for `bucket`, materialized from its initial value on first access.
  nn::Vec& embedding_row(std::uint32_t bucket) {
    auto it = rows_.find(bucket);
    if (it == rows_.end()) {
      nn::Vec scratch(cfg_.dim);
      nn::Vec v = row_value(bucket, scratch);
      {
        std::lock_guard lock(init_mu_);
        init_cache_.erase(bucket);
      }
      it = rows_.emplace(bucket, Row{std::move(v), nn::Vec::Zero(cfg_.dim), nn::Vec::Zero(cfg_.dim)}).first;
    }
    return it->second.value;
  }

  const std::unordered_map<std::uint32_t, nn::Vec>& row_grads() const { return row_grads_; }
  std::size_t stored_rows() const { return rows_.size(); }

  // AdamW on dense parameters; lazy AdamW on embedding rows touched since zero_grad().
  void step(const nn::AdamWConfig& cfg) {
    if (!dense_opt_) dense_opt_.emplace(dense_params(), cfg);
    dense_opt_->step();
    ++sparse_steps_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(sparse_steps_));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(sparse_steps_));
    std::vector<std::uint32_t> touched;
    touched.reserve(row_grads_.size());
    for (const auto& [b, g] : row_grads_) touched.push_back(b);
    std::sort(touched.begin(), touched.end());
    for (std::uint32_t b : touched) {
      const nn::Vec& g = row_grads_.at(b);
      embedding_row(b);
      Row& r = rows_.at(b);
      r.m = cfg.beta1 * r.m + (1 - cfg.beta1) * g;
      r.v = cfg.beta2 * r.v + (1 - cfg.beta2) * g.cwiseAbs2();
      r.value *= 1.0 - cfg.lr * cfg.weight_decay;
      r.value.array() -= cfg.lr * (r.m.array() / bc1) / ((r.v.array() / bc2).sqrt() + cfg.eps);
    }
  }

  TensorArchive to_archive() const {
    TensorArchive a;
    a.meta = {{"kind", "reader"},
              {"dim", cfg_.dim},
              {"hidden", cfg_.hidden},
              {"buckets_log2", cfg_.buckets_log2},
              {"min_n", cfg_.min_n},
              {"max_n", cfg_.max_n},
              {"init_std", cfg_.init_std},
              {"seed", cfg_.seed},
              {"feature_dim", cfg_.hidden}};
    for (const auto* p : {&w1_, &b1_, &head_w_, &head_b_})
      a.put(p->name, {p->value.rows(), p->value.cols()},
            std::vector<double>(p->value.data(), p->value.data() + p->value.size()));
    std::vector<std::uint32_t> buckets;
    for (const auto& [b, r] : rows_) buckets.push_back(b);
    std::sort(buckets.begin(), buckets.end());
    std::vector<double> ids, values;
    values.reserve(buckets.size() * static_cast<std::size_t>(cfg_.dim));
    for (auto b : buckets) {
      ids.push_back(static_cast<double>(b));
      const auto& v = rows_.at(b).value;
      values.insert(values.end(), v.data(), v.data() + v.size());
    }
    a.put("embedding.buckets", {static_cast<std::int64_t>(ids.size())}, std::move(ids));
    a.put("embedding.rows", {static_cast<std::int64_t>(buckets.size()), cfg_.dim}, std::move(values));
    return a;
  }

  static ReaderConfig config_from_archive(const TensorArchive& a) {
    if (a.meta.value("kind", "") != "reader") throw Error("checkpoint is not a reader");
    ReaderConfig c;
    c.dim = a.meta.at("dim").get<int>();
    c.hidden = a.meta.at("hidden").get<int>();
    c.buckets_log2 = a.meta.at("buckets_log2").get<int>();
    c.min_n = a.meta.at("min_n").get<int>();
    c.max_n = a.meta.at("max_n").get<int>();
    c.init_std = a.meta.at("init_std").get<double>();
    c.seed = a.meta.at("seed").get<std::uint64_t>();
    return c;
  }

  void load_archive(const TensorArchive& a) {
    for (auto* p : dense_params()) {
      const auto& t = a.get(p->name);
      if (t.data.size() != static_cast<std::size_t>(p->value.size())) throw Error("shape mismatch for " + p->name);
      std::copy(t.data.begin(), t.data.end(), p->value.data());
    }
    rows_.clear();
    const auto& ids = a.get("embedding.buckets").data;
    const auto& vals = a.get("embedding.rows").data;
    if (vals.size() != ids.size() * static_cast<std::size_t>(cfg_.dim)) throw Error("embedding table shape mismatch");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      nn::Vec v = Eigen::Map<const nn::Vec>(vals.data() + i * static_cast<std::size_t>(cfg_.dim), cfg_.dim);
      rows_.emplace(static_cast<std::uint32_t>(ids[i]), Row{std::move(v), nn::Vec::Zero(cfg_.dim), nn::Vec::Zero(cfg_.dim)});
    }
  }

  // Copies parameter values (not optimizer state) from `other`.
  void copy_weights_from(const HashedReader& other) {
    w1_.value = other.w1_.value;
    b1_.value = other.b1_.value;
    head_w_.value = other.head_w_.value;
    head_b_.value = other.head_b_.value;
    rows_.clear();
    for (const auto& [b, r] : other.rows_)
      rows_.emplace(b, Row{r.value, nn::Vec::Zero(cfg_.dim), nn::Vec::Zero(cfg_.dim)});
  }

 private:
  struct Row {
    nn::Vec value;
    nn::Vec m;
    nn::Vec v;
  };

  void init_row(std::uint32_t bucket, nn::Vec& out) const {
    nn::Gaussian g(detail::splitmix64(cfg_.seed * 0x9E3779B97F4A7C15ULL + bucket));
    for (int i = 0; i < cfg_.dim; ++i) out[i] = g() * cfg_.init_std;
  }

  // Untrained rows are memoized separately so checkpoints hold trained rows only.
  const nn::Vec& row_value(std::uint32_t bucket, nn::Vec& scratch) const {
    auto it = rows_.find(bucket);
    if (it != rows_.end()) return it->second.value;
    std::lock_guard lock(init_mu_);
    auto jt = init_cache_.find(bucket);
    if (jt != init_cache_.end()) return jt->second;
    init_row(bucket, scratch);
    return init_cache_.emplace(bucket, scratch).first->second;
  }

  ReaderConfig cfg_;
  nn::Param w1_, b1_, head_w_, head_b_;
  std::unordered_map<std::uint32_t, Row> rows_;
  std::unordered_map<std::uint32_t, nn::Vec> row_grads_;
  mutable std::unordered_map<std::uint32_t, nn::Vec> init_cache_;
  mutable std::mutex init_mu_;
  std::optional<nn::AdamW> dense_opt_;
  std::int64_t sparse_steps_ = 0;
};

}  // namespace treetext
