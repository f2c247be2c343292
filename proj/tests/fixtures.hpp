#pragma once

// A small synthetic world shared by the training and evaluation tests.

#include <map>
#include <memory>

#include "treetext/pipeline.hpp"
#include "treetext/synth.hpp"

namespace fixture {

struct World {
  treetext::SynthOutput synth;
  treetext::SummaryBank bank;
  std::map<double, treetext::TreeEnsemble> ensembles;
  treetext::NullGlosser null;
  std::unique_ptr<treetext::GlossCache> gloss;
  treetext::CandidatePools pools;
  treetext::EmbeddingCache embed;
  std::vector<treetext::PatientExample> train, val, test;

  explicit World(std::size_t n = 160, std::uint64_t seed = 5) {
    using namespace treetext;
    SynthConfig sc;
    sc.n_patients = n;
    sc.prevalence = 0.3;
    sc.seed = seed;
    synth = generate(sc);
    bank = build_summary_bank(synth.cohort, {8, 16});
    BoostConfig bc;
    bc.n_rounds = 6;
    ensembles = train_window_ensembles(bank, bc);
    gloss = std::make_unique<GlossCache>(null);
    EvidenceOptions opts;
    opts.base_rate = synth.cohort.base_rate();
    EvidenceMapper mapper(ensembles, bank.variables, *gloss, opts);
    pools = build_candidates(bank, mapper);
    auto ctx = token_context(synth.cohort, bank);
    train = make_examples(synth.cohort, Split::kTrain, pools, ctx, embed);
    val = make_examples(synth.cohort, Split::kVal, pools, ctx, embed);
    test = make_examples(synth.cohort, Split::kTest, pools, ctx, embed);
  }
};

inline treetext::TrainConfig small_config(std::uint64_t seed = 0) {
  treetext::TrainConfig cfg;
  cfg.seed = seed;
  cfg.max_epochs = 2;
  cfg.patience = 1;
  cfg.reader_warmup_epochs = 1;
  cfg.k = 10;
  cfg.k_min = 2;
  cfg.selector.model_dim = 32;
  cfg.selector.ff_dim = 64;
  cfg.selector.seed = seed;
  cfg.reader.dim = 32;
  cfg.reader.hidden = 16;
  cfg.reader.buckets_log2 = 14;
  cfg.reader.seed = seed;
  return cfg;
}

}  // namespace fixture
