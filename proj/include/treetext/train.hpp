#pragma once

// Joint self-critical training of the selector and the reader.
//
// Per patient the selector runs once; a sampled and a greedy evidence set are
// assembled and both read. The reader learns from the mean of the two task
// losses. The selector learns from the normalized gap between the greedy and
// sampled losses (the greedy run is the baseline), plus an entropy bonus.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "treetext/ces.hpp"
#include "treetext/common.hpp"
#include "treetext/embed.hpp"
#include "treetext/ingest.hpp"
#include "treetext/metrics.hpp"
#include "treetext/nn.hpp"
#include "treetext/reader.hpp"
#include "treetext/tem.hpp"

namespace treetext {

struct TrainConfig {
  std::size_t k = 30;
  std::size_t k_min = 5;
  std::size_t top_m = 5;  // recorded for provenance; pools are built upstream
  std::size_t batch_size = 8;
  double reader_lr = 1e-3;
  double selector_lr = 1e-4;
  double weight_decay = 1e-4;
  double lambda_sel = 1.0;
  double lambda_ent = 0.01;
  double eps = 1e-6;
  int max_epochs = 10;
  int patience = 10;
  // Reader-only epochs on uniformly random budget-K evidence subsets before joint
  // training; stands in for starting from a pretrained encoder.
  int reader_warmup_epochs = 1;
  std::uint64_t seed = 0;
  std::size_t max_length = kDefaultMaxLength;
  bool loss_on_raw_actions = true;  // selector log-likelihood on pre-floor/cap draws
  SelectorInputMask mask;
  SelectorConfig selector;
  ReaderConfig reader;

  void validate() const {
    if (k < k_min) throw Error("budget K must be >= K_min");
    if (k == 0) throw Error("budget K must be positive");
    if (batch_size == 0) throw Error("batch size must be positive");
    if (!(reader_lr > 0) || !(selector_lr > 0)) throw Error("learning rates must be positive");
    if (!(eps > 0)) throw Error("epsilon must be positive");
    if (max_epochs < 1 || patience < 1) throw Error("epochs and patience must be >= 1");
    if (reader_warmup_epochs < 0) throw Error("reader warm-up epochs must be >= 0");
  }

  nlohmann::ordered_json to_json() const {
    return {{"K", k},
            {"K_min", k_min},
            {"M", top_m},
            {"batch_size", batch_size},
            {"reader_lr", reader_lr},
            {"selector_lr", selector_lr},
            {"weight_decay", weight_decay},
            {"lambda_sel", lambda_sel},
            {"lambda_ent", lambda_ent},
            {"eps", eps},
            {"max_epochs", max_epochs},
            {"patience", patience},
            {"reader_warmup_epochs", reader_warmup_epochs},
            {"seed", seed},
            {"max_length", max_length},
            {"loss_on_raw_actions", loss_on_raw_actions},
            {"mask", {{"embedding", mask.embedding}, {"leaf_stats", mask.leaf_stats}, {"gloss", mask.gloss}}}};
  }
};

// One patient's fixed training inputs.
struct PatientExample {
  std::string id;
  int label = 0;
  std::string prefix;
  const std::vector<EvidenceUnit>* pool = nullptr;
  SelectorTokens tokens;
  std::vector<SourceTuple> keys;

  std::size_t pool_size() const { return pool ? pool->size() : 0; }
};

inline std::vector<PatientExample> make_examples(const Cohort& cohort, Split split, const CandidatePools& pools,
                                                 const TokenContext& ctx, EmbeddingCache& cache,
                                                 const SelectorInputMask& mask = {}) {
  static const std::vector<EvidenceUnit> kEmpty;
  std::vector<PatientExample> out;
  for (const auto* r : cohort.in_split(split)) {
    PatientExample ex;
    ex.id = r->id;
    ex.label = r->label;
    ex.prefix = render_prefix(r->statics);
    auto it = pools.find(r->id);
    ex.pool = it == pools.end() ? &kEmpty : &it->second;
    if (!ex.pool->empty()) {
      ex.tokens = build_tokens(*ex.pool, ctx, cache, mask);
      ex.keys = source_keys(*ex.pool);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline Assembly assemble_selected(const PatientExample& ex, std::span<const std::size_t> selected,
                                  std::size_t max_len) {
  std::vector<const EvidenceUnit*> units;
  units.reserve(selected.size());
  for (std::size_t i : selected) units.push_back(&(*ex.pool)[i]);
  return assemble_input(ex.prefix, std::move(units), max_len);
}

// Normalized self-critical advantages: (delta - mean) / (std + eps), population std.
inline std::vector<double> normalized_advantages(std::span<const double> deltas, double eps) {
  const double n = static_cast<double>(deltas.size());
  double mu = 0;
  for (double d : deltas) mu += d;
  mu /= n;
  double var = 0;
  for (double d : deltas) var += (d - mu) * (d - mu);
  const double sigma = std::sqrt(var / n);
  std::vector<double> a;
  a.reserve(deltas.size());
  for (double d : deltas) a.push_back((d - mu) / (sigma + eps));
  return a;
}

inline double bernoulli_entropy(double q) {
  double h = 0;
  if (q > 0) h -= q * std::log(q);
  if (q < 1) h -= (1 - q) * std::log(1 - q);
  return h;
}

// d(selector loss)/d(margins) for one patient, given its advantage.
// Loss = -(1/B) * adv * sum_j log pi(z_j)  -  lambda_ent * H, where H is the
// batch mean of the per-patient mean candidate entropy.
inline nn::Vec selector_margin_grad(const nn::Vec& margins, std::span<const char> z, double advantage,
                                    std::size_t batch, double lambda_sel, double lambda_ent, bool with_sel) {
  const double b = static_cast<double>(batch);
  const double n = static_cast<double>(margins.size());
  nn::Vec d(margins.size());
  for (Eigen::Index j = 0; j < margins.size(); ++j) {
    const double r = margins[j];
    const double q = detail::sigmoid(r);
    double g = 0;
    if (with_sel) g += lambda_sel * (-(advantage / b) * (static_cast<double>(z[static_cast<std::size_t>(j)]) - q));
    // dH/dr = -r q (1 - q)
    g += lambda_ent * r * q * (1 - q) / (b * n);
    d[j] = g;
  }
  return d;
}

struct StepStats {
  double task_loss = 0.0;
  double sel_loss = 0.0;
  double entropy = 0.0;
  double mean_sampled = 0.0;  // mean |S| after floor/cap, sampled
  double mean_greedy = 0.0;
  double mean_delta = 0.0;
  std::size_t patients = 0;
};

struct Trainer {
  SelectorPolicy& policy;
  HashedReader& reader;
  TrainConfig cfg;
  nn::AdamW selector_opt;
  std::mt19937_64 rng;

  Trainer(SelectorPolicy& p, HashedReader& r, const TrainConfig& c)
      : policy(p), reader(r), cfg(c),
        selector_opt(p.params(), nn::AdamWConfig{c.selector_lr, 0.9, 0.999, 1e-8, c.weight_decay}),
        rng(detail::splitmix64(c.seed ^ 0x7a11ULL)) {
    cfg.validate();
  }

  nn::AdamWConfig reader_opt() const { return {cfg.reader_lr, 0.9, 0.999, 1e-8, cfg.weight_decay}; }

  StepStats step(std::span<const PatientExample* const> batch) {
    const std::size_t b = batch.size();
    policy.zero_grad();
    reader.zero_grad();
    struct PerPatient {
      SelectorPolicy::Trace trace;
      std::vector<char> z;
      bool has_pool = false;
    };
    std::vector<PerPatient> pp(b);
    std::vector<double> deltas(b, 0.0);
    StepStats st;
    st.patients = b;
    auto fail = [&](const std::string& what) {
      std::string ids;
      for (const auto* ex : batch) ids += (ids.empty() ? "" : ",") + ex->id;
      throw Error(what + " in batch [" + ids + "]");
    };

    for (std::size_t i = 0; i < b; ++i) {
      const auto& ex = *batch[i];
      std::vector<std::size_t> sel_s, sel_g;
      if (ex.pool_size() > 0) {
        pp[i].has_pool = true;
        nn::Vec margins;
        try {
          margins = policy.forward(ex.tokens, &pp[i].trace);
        } catch (const Error& e) {
          fail(e.what());
        }
        std::span<const double> m(margins.data(), static_cast<std::size_t>(margins.size()));
        auto s = assemble(m, ex.keys, SelectMode::kSampled, cfg.k, cfg.k_min, &rng);
        auto g = assemble(m, ex.keys, SelectMode::kGreedy, cfg.k, cfg.k_min, &rng);
        pp[i].z = cfg.loss_on_raw_actions ? s.raw_actions : s.actions;
        sel_s = std::move(s.selected);
        sel_g = std::move(g.selected);
        double h = 0;
        for (Eigen::Index j = 0; j < margins.size(); ++j) h += bernoulli_entropy(detail::sigmoid(margins[j]));
        st.entropy += h / static_cast<double>(margins.size()) / static_cast<double>(b);
      }
      st.mean_sampled += static_cast<double>(sel_s.size()) / static_cast<double>(b);
      st.mean_greedy += static_cast<double>(sel_g.size()) / static_cast<double>(b);

      auto as = assemble_selected(ex, sel_s, cfg.max_length);
      auto ag = assemble_selected(ex, sel_g, cfg.max_length);
      HashedReader::Trace ts, tg;
      const double ls_logit = reader.forward(as.joined_text, &ts);
      const double lg_logit = reader.forward(ag.joined_text, &tg);
      const double ls = detail::bce_with_logit(ls_logit, ex.label);
      const double lg = detail::bce_with_logit(lg_logit, ex.label);
      if (!std::isfinite(ls) || !std::isfinite(lg)) fail("non-finite task loss");
      const double scale = 1.0 / (2.0 * static_cast<double>(b));
      reader.backward(ts, (detail::sigmoid(ls_logit) - ex.label) * scale);
      reader.backward(tg, (detail::sigmoid(lg_logit) - ex.label) * scale);
      st.task_loss += (ls + lg) * scale;
      deltas[i] = lg - ls;
      st.mean_delta += deltas[i] / static_cast<double>(b);
    }

    const bool with_sel = b >= 2 && cfg.lambda_sel != 0.0;
    std::vector<double> adv = with_sel ? normalized_advantages(deltas, cfg.eps) : std::vector<double>(b, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
      if (!pp[i].has_pool) continue;
      const auto& margins = pp[i].trace.margins;
      if (with_sel) {
        double ll = 0;
        for (Eigen::Index j = 0; j < margins.size(); ++j) {
          const double r = margins[j];
          // log sigmoid(r) = -softplus(-r); log(1 - sigmoid(r)) = -softplus(r)
          ll += pp[i].z[static_cast<std::size_t>(j)] ? -detail::softplus(-r) : -detail::softplus(r);
        }
        st.sel_loss += -adv[i] * ll / static_cast<double>(b);
      }
      nn::Vec d = selector_margin_grad(margins, pp[i].z, adv[i], b, cfg.lambda_sel, cfg.lambda_ent, with_sel);
      policy.backward(batch[i]->tokens, pp[i].trace, d);
    }
    if (!std::isfinite(st.task_loss) || !std::isfinite(st.sel_loss)) fail("non-finite loss");
    selector_opt.step();
    reader.step(reader_opt());
    return st;
  }
};

// Uniformly random min(k, N) pool indices, ascending.
template <typename Rng>
std::vector<std::size_t> random_subset(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const std::size_t m = std::min(k, n);
  for (std::size_t i = 0; i < m; ++i) {
    auto j = i + static_cast<std::size_t>(detail::unit_interval(rng()) * static_cast<double>(n - i));
    std::swap(idx[i], idx[std::min(j, n - 1)]);
  }
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// One reader-only update on random budget-K subsets. Returns the mean task loss.
inline double reader_warmup_step(Trainer& t, std::span<const PatientExample* const> batch) {
  t.reader.zero_grad();
  double loss = 0;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto* ex : batch) {
    auto sel = random_subset(ex->pool_size(), t.cfg.k, t.rng);
    auto a = assemble_selected(*ex, sel, t.cfg.max_length);
    HashedReader::Trace tr;
    const double logit = t.reader.forward(a.joined_text, &tr);
    const double l = detail::bce_with_logit(logit, ex->label);
    if (!std::isfinite(l)) throw Error("non-finite task loss during reader warm-up for " + ex->id);
    t.reader.backward(tr, (detail::sigmoid(logit) - ex->label) * scale);
    loss += l * scale;
  }
  t.reader.step(t.reader_opt());
  return loss;
}

struct Prediction {
  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::size_t> selected_counts;
  std::size_t truncated = 0;

  double mean_selected() const {
    if (selected_counts.empty()) return 0.0;
    double s = 0;
    for (auto c : selected_counts) s += static_cast<double>(c);
    return s / static_cast<double>(selected_counts.size());
  }
};

// Margins of one patient's pool (empty when the pool is empty).
inline std::vector<double> patient_margins(const SelectorPolicy& policy, const PatientExample& ex) {
  if (ex.pool_size() == 0) return {};
  nn::Vec m = policy.forward(ex.tokens);
  return {m.data(), m.data() + m.size()};
}

// Greedy-mode evaluation.
inline Prediction predict_greedy(const SelectorPolicy& policy, const HashedReader& reader,
                                 std::span<const PatientExample> examples, const TrainConfig& cfg) {
  Prediction out;
  for (const auto& ex : examples) {
    std::vector<std::size_t> selected;
    if (ex.pool_size() > 0) {
      auto m = patient_margins(policy, ex);
      selected = assemble<std::mt19937_64>(m, ex.keys, SelectMode::kGreedy, cfg.k, cfg.k_min).selected;
    }
    auto a = assemble_selected(ex, selected, cfg.max_length);
    out.truncated += a.truncated;
    out.scores.push_back(reader.predict(a).prob);
    out.labels.push_back(ex.label);
    out.selected_counts.push_back(selected.size());
  }
  return out;
}

struct EpochRecord {
  int epoch = 0;
  StepStats train;
  double val_auroc = 0.0;
  double val_auprc = 0.0;
  double val_mean_selected = 0.0;

  nlohmann::ordered_json to_json() const {
    return {{"epoch", epoch},
            {"task_loss", train.task_loss},
            {"sel_loss", train.sel_loss},
            {"entropy", train.entropy},
            {"train_mean_selected_sampled", train.mean_sampled},
            {"train_mean_selected_greedy", train.mean_greedy},
            {"train_mean_delta", train.mean_delta},
            {"val_auroc", val_auroc},
            {"val_auprc", val_auprc},
            {"val_mean_selected", val_mean_selected}};
  }
};

struct FitResult {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_auroc = 0.0;
  TensorArchive best_selector;
  TensorArchive best_reader;
};

// Epoch loop with greedy validation AUROC model selection. The best
// checkpoint is restored into `policy` and `reader` before returning.
inline FitResult fit(SelectorPolicy& policy, HashedReader& reader, std::span<const PatientExample> train,
                     std::span<const PatientExample> val, const TrainConfig& cfg, std::ostream* log = nullptr,
                     const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  if (train.empty()) throw Error("training split is empty");
  if (val.empty()) throw Error("validation split is empty");
  Trainer trainer(policy, reader, cfg);
  std::mt19937_64 order_rng(detail::splitmix64(cfg.seed ^ 0x0bde7ULL));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto shuffle = [&] {
    for (std::size_t i = order.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(detail::unit_interval(order_rng()) * static_cast<double>(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
  };
  auto batch_at = [&](std::size_t start) {
    std::vector<const PatientExample*> batch;
    for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_size); ++k) batch.push_back(&train[order[k]]);
    return batch;
  };

  for (int epoch = 1; epoch <= cfg.reader_warmup_epochs; ++epoch) {
    shuffle();
    double loss = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batches)
      loss += reader_warmup_step(trainer, batch_at(start));
    if (log) *log << nlohmann::ordered_json{{"warmup_epoch", epoch}, {"task_loss", loss / static_cast<double>(batches)}}.dump() << '\n';
  }

  FitResult res;
  res.best_val_auroc = -1.0;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    shuffle();
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      auto st = trainer.step(batch_at(start));
      rec.train.task_loss += st.task_loss;
      rec.train.sel_loss += st.sel_loss;
      rec.train.entropy += st.entropy;
      rec.train.mean_sampled += st.mean_sampled;
      rec.train.mean_greedy += st.mean_greedy;
      rec.train.mean_delta += st.mean_delta;
      rec.train.patients += st.patients;
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    rec.train.task_loss /= nb;
    rec.train.sel_loss /= nb;
    rec.train.entropy /= nb;
    rec.train.mean_sampled /= nb;
    rec.train.mean_greedy /= nb;
    rec.train.mean_delta /= nb;

    auto pv = predict_greedy(policy, reader, val, cfg);
    rec.val_auroc = auroc(pv.scores, pv.labels);
    rec.val_auprc = auprc(pv.scores, pv.labels);
    rec.val_mean_selected = pv.mean_selected();
    res.epochs.push_back(rec);
    if (log) *log << rec.to_json().dump() << '\n';
    if (on_epoch) on_epoch(rec);

    if (rec.val_auroc > res.best_val_auroc) {
      res.best_val_auroc = rec.val_auroc;
      res.best_epoch = epoch;
      res.best_selector = policy.to_archive();
      res.best_reader = reader.to_archive();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  policy.load_archive(res.best_selector);
  reader.load_archive(res.best_reader);
  return res;
}

}  // namespace treetext
