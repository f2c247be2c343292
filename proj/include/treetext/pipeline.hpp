#pragma once

// Stage glue shared by the command-line tool and end-to-end tests.

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "treetext/boost.hpp"
#include "treetext/ces.hpp"
#include "treetext/embed.hpp"
#include "treetext/ingest.hpp"
#include "treetext/tem.hpp"
#include "treetext/train.hpp"
#include "treetext/windows.hpp"

namespace treetext {

inline const std::vector<double>& default_window_sizes() {
  static const std::vector<double> sizes{1, 2, 4, 8, 16, 32, 48};
  return sizes;
}

// One ensemble per window size, each trained on that size's train rows with
// early stopping on its validation rows.
inline std::map<double, TreeEnsemble> train_window_ensembles(const SummaryBank& bank, const BoostConfig& cfg,
                                                             std::map<double, BoostLog>* logs = nullptr) {
  std::map<double, TreeEnsemble> out;
  const auto names = feature_names(bank.variables);
  for (double w : bank.window_sizes) {
    Dataset train = make_dataset(bank, w, Split::kTrain);
    Dataset val = make_dataset(bank, w, Split::kVal);
    BoostLog log;
    out.emplace(w, train_ensemble(train, val.rows() ? &val : nullptr, cfg, &log, w, names));
    if (logs) (*logs)[w] = std::move(log);
  }
  return out;
}

enum class GlosserKind { kNull, kTemplate, kExternal };

inline std::unique_ptr<GlossProvider> make_glosser(GlosserKind kind, const std::string& cache_path = {}) {
  switch (kind) {
    case GlosserKind::kNull: return std::make_unique<NullGlosser>();
    case GlosserKind::kTemplate: return std::make_unique<TemplateGlosser>(TemplateGlosser::default_table());
    case GlosserKind::kExternal:
      if (cache_path.empty()) throw Error("the external glosser needs a gloss cache file");
      return std::make_unique<ExternalGlosser>(cache_path);
  }
  throw Error("unknown glosser");
}

inline TokenContext token_context(const Cohort& cohort, const SummaryBank& bank) {
  TokenContext ctx;
  ctx.horizon = cohort.horizon;
  ctx.max_window = 0;
  for (double w : bank.window_sizes) ctx.max_window = std::max(ctx.max_window, w);
  ctx.base_rate = cohort.base_rate();
  return ctx;
}

}  // namespace treetext
