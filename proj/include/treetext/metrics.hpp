#pragma once

// Ranking and threshold metrics for binary scores.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "json.hpp"
#include "treetext/common.hpp"

namespace treetext {

namespace detail {

// Indices sorted by descending score (stable).
inline std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

inline void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error("scores and labels differ in length");
  for (int y : labels)
    if (y != 0 && y != 1) throw Error("labels must be 0 or 1");
}

}  // namespace detail

// P(score+ > score-) + 1/2 P(score+ = score-), exact over all pairs.
inline double auroc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_inputs(scores, labels);
  auto order = detail::descending_order(scores);
  double pos_total = 0, neg_total = 0;
  for (int y : labels) (y ? pos_total : neg_total) += 1;
  if (pos_total == 0 || neg_total == 0) throw Error("AUROC is undefined with a single class");
  // Walk from the lowest score up so each tied block sees the negatives strictly below it.
  double u = 0, neg_below = 0;
  std::size_t i = order.size();
  while (i > 0) {
    std::size_t j = i;
    const double s = scores[order[i - 1]];
    double pos = 0, neg = 0;
    while (j > 0 && scores[order[j - 1]] == s) {
      (labels[order[j - 1]] ? pos : neg) += 1;
      --j;
    }
    u += pos * neg_below + 0.5 * pos * neg;
    neg_below += neg;
    i = j;
  }
  return u / (pos_total * neg_total);
}

// Average precision with tied scores collapsed into one block: every positive
// in a block gets the precision measured at the end of that block.
inline double auprc(std::span<const double> scores, std::span<const int> labels) {
  detail::check_inputs(scores, labels);
  auto order = detail::descending_order(scores);
  double pos_total = 0;
  for (int y : labels) pos_total += y;
  if (pos_total == 0) throw Error("AUPRC is undefined without positives");
  double tp = 0, seen = 0, sum = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double block_pos = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      block_pos += labels[order[j]];
      ++j;
    }
    tp += block_pos;
    seen += static_cast<double>(j - i);
    const double precision = tp / seen;
    for (double k = 0; k < block_pos; ++k) sum += precision;
    i = j;
  }
  return sum / pos_total;
}

// Positive prediction means score >= threshold.
inline double f1_at_threshold(std::span<const double> scores, std::span<const int> labels, double threshold) {
  detail::check_inputs(scores, labels);
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i]) ++tp;
    else if (pred) ++fp;
    else if (labels[i]) ++fn;
  }
  return tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
}

struct F1Choice {
  double f1 = 0.0;
  double threshold = 0.5;
};

// Scans every distinct score as a threshold; the lowest-threshold maximizer wins ties.
inline F1Choice f1_at_best_threshold(std::span<const double> scores, std::span<const int> labels) {
  detail::check_inputs(scores, labels);
  if (std::find(labels.begin(), labels.end(), 1) == labels.end()) throw Error("F1 is undefined without positives");
  auto order = detail::descending_order(scores);
  double pos_total = 0;
  for (int y : labels) pos_total += y;
  F1Choice best{-1.0, 0.5};
  double tp = 0, fp = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] ? tp : fp) += 1;
      ++i;
    }
    const double f1 = tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + (pos_total - tp));
    if (f1 >= best.f1) best = {f1, s};
  }
  return best;
}

struct MetricReport {
  double auroc = 0.0;
  double auprc = 0.0;
  double f1 = 0.0;
  double threshold = 0.5;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;

  nlohmann::ordered_json to_json() const {
    return {{"auroc", auroc}, {"auprc", auprc}, {"f1", f1}, {"threshold", threshold},
            {"n_pos", n_pos}, {"n_neg", n_neg}};
  }
};

// Metrics on one split; the F1 threshold is supplied (chosen on validation).
inline MetricReport metric_report(std::span<const double> scores, std::span<const int> labels, double threshold) {
  MetricReport r;
  r.auroc = auroc(scores, labels);
  r.auprc = auprc(scores, labels);
  r.threshold = threshold;
  r.f1 = f1_at_threshold(scores, labels, threshold);
  for (int y : labels) (y ? r.n_pos : r.n_neg) += 1;
  return r;
}

}  // namespace treetext
