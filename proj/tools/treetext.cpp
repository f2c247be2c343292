// Command-line driver for the full pipeline. Every subcommand reads and writes
// artifacts under one work directory and leaves a manifest next to its outputs.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "treetext/treetext.hpp"

namespace fs = std::filesystem;
using namespace treetext;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

// ---- work directory ---------------------------------------------------------------

struct Work {
  fs::path root;

  std::string path(const std::string& name) const { return (root / name).string(); }

  void require(const std::string& name, const char* producer) const {
    if (!fs::exists(root / name))
      throw MissingArtifact("missing " + path(name) + "; run `treetext " + producer + " --work " + root.string() +
                            "` first");
  }

  ojson read_json(const std::string& name, const char* producer) const {
    require(name, producer);
    return ojson::parse(detail::read_file(path(name)));
  }

  Cohort cohort() const {
    auto meta = read_json("cohort_meta.json", "ingest` or `treetext synth");
    LoadOptions opts;
    opts.vocabulary = meta.at("variables").get<std::vector<std::string>>();
    return load_cohort(path("cohort.jsonl"), CohortFormat::kJsonl, meta.at("horizon").get<double>(), opts);
  }

  SummaryBank bank(double horizon) const {
    require("bank.csv", "build-windows");
    std::ifstream in(path("bank.csv"));
    return bank_from_csv(in, horizon, path("bank.csv"));
  }

  std::map<double, TreeEnsemble> ensembles(const SummaryBank& bank) const {
    std::map<double, TreeEnsemble> out;
    for (double w : bank.window_sizes) {
      std::string name = "trees/" + ensemble_id(w) + ".json";
      require(name, "train-trees");
      out.emplace(w, ensemble_from_json(json::parse(detail::read_file(path(name)))));
    }
    return out;
  }

  CandidatePools pools() const {
    require("pools.jsonl", "build-evidence");
    std::ifstream in(path("pools.jsonl"));
    return pools_from_jsonl(in, path("pools.jsonl"));
  }

  // Seed run directories holding trained checkpoints.
  std::vector<fs::path> runs(const std::vector<std::uint64_t>& seeds) const {
    std::vector<fs::path> out;
    if (!seeds.empty()) {
      for (auto s : seeds) out.push_back(root / ("seed_" + std::to_string(s)));
    } else if (fs::exists(root)) {
      for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory() && e.path().filename().string().rfind("seed_", 0) == 0) out.push_back(e.path());
      std::sort(out.begin(), out.end());
    }
    if (out.empty()) throw MissingArtifact("no trained runs under " + root.string() + "; run `treetext train` first");
    for (const auto& r : out)
      for (const char* f : {"selector.ckpt", "reader.ckpt", "train_config.json"})
        if (!fs::exists(r / f))
          throw MissingArtifact("missing " + (r / f).string() + "; run `treetext train --work " + root.string() +
                                "` first");
    return out;
  }
};

// Run-wide inputs shared by train, evaluate, sweep, enrich and explain.
struct Loaded {
  Cohort cohort;
  SummaryBank bank;
  CandidatePools pools;
  EmbeddingCache embed;
  TokenContext ctx;

  explicit Loaded(const Work& w) {
    cohort = w.cohort();
    bank = w.bank(cohort.horizon);
    pools = w.pools();
    ctx = token_context(cohort, bank);
  }

  std::vector<PatientExample> examples(Split s, const SelectorInputMask& mask) {
    return make_examples(cohort, s, pools, ctx, embed, mask);
  }
};

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.k = j.at("K").get<std::size_t>();
  c.k_min = j.at("K_min").get<std::size_t>();
  c.top_m = j.at("M").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.reader_lr = j.at("reader_lr").get<double>();
  c.selector_lr = j.at("selector_lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.lambda_sel = j.at("lambda_sel").get<double>();
  c.lambda_ent = j.at("lambda_ent").get<double>();
  c.eps = j.at("eps").get<double>();
  c.max_epochs = j.at("max_epochs").get<int>();
  c.patience = j.at("patience").get<int>();
  c.reader_warmup_epochs = j.at("reader_warmup_epochs").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.max_length = j.at("max_length").get<std::size_t>();
  c.loss_on_raw_actions = j.at("loss_on_raw_actions").get<bool>();
  c.mask.embedding = j.at("mask").at("embedding").get<bool>();
  c.mask.leaf_stats = j.at("mask").at("leaf_stats").get<bool>();
  c.mask.gloss = j.at("mask").at("gloss").get<bool>();
  return c;
}

struct TrainedRun {
  TrainConfig cfg;
  std::unique_ptr<SelectorPolicy> policy;
  std::unique_ptr<HashedReader> reader;

  explicit TrainedRun(const fs::path& dir) {
    cfg = train_config_from_json(json::parse(detail::read_file((dir / "train_config.json").string())));
    auto sel = TensorArchive::load((dir / "selector.ckpt").string());
    auto rd = TensorArchive::load((dir / "reader.ckpt").string());
    cfg.selector = SelectorPolicy::config_from_archive(sel);
    cfg.reader = HashedReader::config_from_archive(rd);
    policy = std::make_unique<SelectorPolicy>(cfg.selector);
    policy->load_archive(sel);
    reader = std::make_unique<HashedReader>(cfg.reader);
    reader->load_archive(rd);
  }
};

std::vector<std::string> g_args;  // effective arguments without --work, recorded in manifests

void save_manifest(Manifest& m, const fs::path& dir) {
  m.args = g_args;
  m.save((dir / ("manifest_" + m.subcommand + ".json")).string());
}

void note(const std::string& s) { std::cerr << "[treetext] " << s << '\n'; }

// ---- subcommands ---------------------------------------------------------------------

struct SynthArgs {
  std::size_t n = 2000;
  std::uint64_t seed = 7;
  double prevalence = 0.15;
  double horizon = 48;
  double effect = 1.0;
};

void write_cohort(const Work& w, const Cohort& c, Manifest& m) {
  detail::write_file(w.path("cohort.jsonl"), cohort_to_jsonl(c));
  ojson meta{{"horizon", c.horizon}, {"variables", c.variables}, {"patients", c.records.size()},
             {"base_rate", c.base_rate()}};
  detail::write_file(w.path("cohort_meta.json"), meta.dump(2) + "\n");
  m.add_output(w.path("cohort.jsonl"));
  m.add_output(w.path("cohort_meta.json"));
}

void run_synth(const Work& w, const SynthArgs& a) {
  SynthConfig cfg;
  cfg.n_patients = a.n;
  cfg.seed = a.seed;
  cfg.prevalence = a.prevalence;
  cfg.horizon = a.horizon;
  for (auto& p : cfg.patterns) p.shift_sd *= a.effect;
  auto out = generate(cfg);
  Manifest m;
  m.subcommand = "synth";
  m.config = {{"n_patients", a.n}, {"prevalence", a.prevalence}, {"horizon", a.horizon}, {"effect", a.effect}};
  m.seeds = {a.seed};
  write_cohort(w, out.cohort, m);
  detail::write_file(w.path("annotations.json"), out.annotations.to_json().dump(2) + "\n");
  m.add_output(w.path("annotations.json"));
  save_manifest(m, w.root);
  note("synthesized " + std::to_string(a.n) + " patients");
}

struct IngestArgs {
  std::string input;
  std::string format = "jsonl";
  std::string sidecar;
  double horizon = 48;
  std::uint64_t split_seed = 0;
  std::vector<std::string> vocabulary;
  std::size_t min_events = 0;
};

void run_ingest(const Work& w, const IngestArgs& a) {
  LoadOptions opts;
  opts.split_seed = a.split_seed;
  opts.sidecar_path = a.sidecar;
  if (!a.vocabulary.empty()) opts.vocabulary = a.vocabulary;
  if (a.format != "jsonl" && a.format != "csv") throw Error("--format must be jsonl or csv");
  auto cohort = load_cohort(a.input, a.format == "csv" ? CohortFormat::kCsv : CohortFormat::kJsonl, a.horizon, opts);
  auto [kept, report] = apply_filters(cohort, a.min_events);
  Manifest m;
  m.subcommand = "ingest";
  m.config = {{"format", a.format}, {"horizon", a.horizon}, {"min_events", a.min_events}, {"vocabulary", a.vocabulary}};
  m.seeds = {a.split_seed};
  m.add_input(a.input);
  if (!a.sidecar.empty()) m.add_input(a.sidecar);
  write_cohort(w, kept, m);
  detail::write_file(w.path("filter_report.json"), report.to_json().dump(2) + "\n");
  m.add_output(w.path("filter_report.json"));
  save_manifest(m, w.root);
  note("ingested " + std::to_string(kept.records.size()) + " patients (" + std::to_string(report.removed()) +
       " filtered)");
}

struct WindowArgs {
  std::vector<double> windows = default_window_sizes();
  bool include_endpoint = false;
};

void run_build_windows(const Work& w, const WindowArgs& a) {
  auto cohort = w.cohort();
  auto bank = build_summary_bank(cohort, a.windows, a.include_endpoint);
  detail::write_file(w.path("bank.csv"), bank_to_csv(bank));
  Manifest m;
  m.subcommand = "build-windows";
  m.config = {{"windows", a.windows}, {"include_horizon_endpoint", a.include_endpoint}};
  m.add_input(w.path("cohort.jsonl"));
  m.add_output(w.path("bank.csv"));
  save_manifest(m, w.root);
  note("built " + std::to_string(bank.rows.size()) + " summary rows");
}

void run_train_trees(const Work& w, const BoostConfig& cfg) {
  auto cohort = w.cohort();
  auto bank = w.bank(cohort.horizon);
  std::map<double, BoostLog> logs;
  auto ens = train_window_ensembles(bank, cfg, &logs);
  fs::create_directories(w.root / "trees");
  Manifest m;
  m.subcommand = "train-trees";
  m.config = {{"max_depth", cfg.max_depth},
              {"n_rounds", cfg.n_rounds},
              {"learning_rate", cfg.learning_rate},
              {"subsample", cfg.subsample},
              {"colsample_per_tree", cfg.colsample_per_tree},
              {"min_child_weight", cfg.min_child_weight},
              {"lambda", cfg.lambda},
              {"early_stopping_patience", cfg.early_stopping_patience}};
  m.seeds = {cfg.seed};
  m.add_input(w.path("bank.csv"));
  ojson log_json = ojson::object();
  for (const auto& [win, e] : ens) {
    std::string p = w.path("trees/" + ensemble_id(win) + ".json");
    detail::write_file(p, ensemble_to_json(e).dump() + "\n");
    m.add_output(p);
    const auto& l = logs.at(win);
    log_json[ensemble_id(win)] = {{"train_logloss", l.train_logloss},
                                  {"val_logloss", l.val_logloss},
                                  {"best_round", l.best_round},
                                  {"rounds_fit", l.rounds_fit}};
    note(ensemble_id(win) + ": " + std::to_string(e.trees.size()) + " trees");
  }
  detail::write_file(w.path("trees/boost_log.json"), log_json.dump(2) + "\n");
  m.add_output(w.path("trees/boost_log.json"));
  save_manifest(m, w.root);
}

struct EvidenceArgs {
  std::size_t top_m = 5;
  std::string glosser = "null";
  std::string gloss_cache;
  std::string ranges;
  std::string task = "Predict in-hospital mortality from the first 48 hours of the stay.";
};

void run_build_evidence(const Work& w, const EvidenceArgs& a) {
  auto cohort = w.cohort();
  auto bank = w.bank(cohort.horizon);
  auto ens = w.ensembles(bank);
  GlosserKind kind;
  if (a.glosser == "null") kind = GlosserKind::kNull;
  else if (a.glosser == "template") kind = GlosserKind::kTemplate;
  else if (a.glosser == "external") kind = GlosserKind::kExternal;
  else throw Error("--glosser must be null, template or external");
  auto provider = make_glosser(kind, a.gloss_cache);
  GlossCache cache(*provider);
  EvidenceOptions opts;
  opts.top_m = a.top_m;
  opts.base_rate = cohort.base_rate();
  opts.task_description = a.task;
  if (!a.ranges.empty()) opts.declared_ranges = ranges_from_json(json::parse(detail::read_file(a.ranges)));
  EvidenceMapper mapper(ens, bank.variables, cache, opts);
  auto pools = build_candidates(bank, mapper);
  detail::write_file(w.path("pools.jsonl"), pools_to_jsonl(pools));
  detail::write_file(w.path("leaf_cache.jsonl"), leaf_cache_to_jsonl(mapper));

  std::size_t units = 0, glossed = 0, leaves = 0, glossed_leaves = 0;
  for (const auto& [id, pool] : pools)
    for (const auto& u : pool) {
      ++units;
      glossed += u.g;
    }
  for (const auto& [k, rec] : mapper.leaf_cache()) {
    ++leaves;
    glossed_leaves += rec.gloss.g;
  }
  ojson stats{{"patients", pools.size()},     {"units", units},       {"glossed_units", glossed},
              {"leaves", leaves},             {"glossed_leaves", glossed_leaves},
              {"provider_calls", cache.provider_calls()}};
  detail::write_file(w.path("evidence_stats.json"), stats.dump(2) + "\n");

  Manifest m;
  m.subcommand = "build-evidence";
  m.config = {{"rl_top_k", a.top_m}, {"glosser", a.glosser}, {"task", a.task}};
  m.add_input(w.path("bank.csv"));
  for (const auto& [win, e] : ens) m.add_input(w.path("trees/" + ensemble_id(win) + ".json"));
  if (!a.gloss_cache.empty()) m.add_input(a.gloss_cache);
  if (!a.ranges.empty()) m.add_input(a.ranges);
  for (const char* f : {"pools.jsonl", "leaf_cache.jsonl", "evidence_stats.json"}) m.add_output(w.path(f));
  save_manifest(m, w.root);
  note("built " + std::to_string(units) + " evidence units over " + std::to_string(leaves) + " leaves");
}

struct TrainArgs {
  TrainConfig cfg;
  std::uint64_t seed_num = 1;
  bool deterministic = false;
};

void run_train(const Work& w, const TrainArgs& a) {
  Loaded data(w);
  auto train = data.examples(Split::kTrain, a.cfg.mask);
  auto val = data.examples(Split::kVal, a.cfg.mask);
  for (std::uint64_t k = 0; k < a.seed_num; ++k) {
    TrainConfig cfg = a.cfg;
    cfg.seed = a.cfg.seed + k;
    cfg.selector.seed = cfg.seed;
    cfg.reader.seed = cfg.seed;
    const fs::path dir = w.root / ("seed_" + std::to_string(cfg.seed));
    fs::create_directories(dir);
    SelectorPolicy policy(cfg.selector);
    HashedReader reader(cfg.reader);
    std::ostringstream log;
    const auto t0 = std::chrono::steady_clock::now();
    auto res = fit(policy, reader, train, val, cfg, &log, [&](const EpochRecord& r) {
      note("seed " + std::to_string(cfg.seed) + " epoch " + std::to_string(r.epoch) +
           ": val AUROC " + detail::format_fixed(r.val_auroc, 4) + ", mean |S| " +
           detail::format_fixed(r.val_mean_selected, 2));
    });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    log << ojson{{"best_epoch", res.best_epoch}, {"best_val_auroc", res.best_val_auroc}}.dump() << '\n';

    const auto p = [&](const char* f) { return (dir / f).string(); };
    policy.to_archive().save(p("selector.ckpt"));
    reader.to_archive().save(p("reader.ckpt"));
    detail::write_file(p("train_log.jsonl"), log.str());
    detail::write_file(p("train_config.json"), cfg.to_json().dump(2) + "\n");

    Manifest m;
    m.subcommand = "train";
    m.config = cfg.to_json();
    m.config["deterministic"] = a.deterministic;
    m.seeds = {cfg.seed};
    for (const char* f : {"cohort.jsonl", "bank.csv", "pools.jsonl"}) m.add_input(w.path(f));
    for (const char* f : {"selector.ckpt", "reader.ckpt", "train_log.jsonl", "train_config.json"}) m.add_output(p(f));
    save_manifest(m, dir);
    note("seed " + std::to_string(cfg.seed) + ": best epoch " + std::to_string(res.best_epoch) + " in " +
         detail::format_fixed(secs, 1) + " s");
  }
}

void run_evaluate(const Work& w, const std::vector<std::uint64_t>& seeds) {
  auto runs = w.runs(seeds);
  Loaded data(w);
  for (const auto& dir : runs) {
    TrainedRun run(dir);
    auto val = data.examples(Split::kVal, run.cfg.mask);
    auto test = data.examples(Split::kTest, run.cfg.mask);
    auto pv = predict_greedy(*run.policy, *run.reader, val, run.cfg);
    auto pt = predict_greedy(*run.policy, *run.reader, test, run.cfg);
    const double thr = f1_at_best_threshold(pv.scores, pv.labels).threshold;
    auto rv = metric_report(pv.scores, pv.labels, thr);
    auto rt = metric_report(pt.scores, pt.labels, thr);
    ojson out{{"val", rv.to_json()},
              {"test", rt.to_json()},
              {"test_mean_selected", pt.mean_selected()},
              {"test_truncated", pt.truncated}};
    detail::write_file((dir / "metrics.json").string(), out.dump(2) + "\n");
    ojson preds = ojson::array();
    for (std::size_t i = 0; i < test.size(); ++i)
      preds.push_back({{"id", test[i].id}, {"label", test[i].label}, {"prob", pt.scores[i]},
                       {"selected", pt.selected_counts[i]}});
    detail::write_file((dir / "test_predictions.json").string(), preds.dump() + "\n");
    Manifest m;
    m.subcommand = "evaluate";
    m.config = run.cfg.to_json();
    m.seeds = {run.cfg.seed};
    for (const char* f : {"selector.ckpt", "reader.ckpt"}) m.add_input((dir / f).string());
    m.add_input(w.path("pools.jsonl"));
    m.add_output((dir / "metrics.json").string());
    m.add_output((dir / "test_predictions.json").string());
    save_manifest(m, dir);
    std::cout << dir.filename().string() << ": test AUROC " << detail::format_fixed(rt.auroc, 4) << ", AUPRC "
              << detail::format_fixed(rt.auprc, 4) << ", F1 " << detail::format_fixed(rt.f1, 4) << ", mean |S| "
              << detail::format_fixed(pt.mean_selected(), 2) << '\n';
  }
}

struct SweepArgs {
  std::vector<std::string> selectors{"ces_top", "leaf_score_top", "recency_top", "random_top", "ces_bottom"};
  std::vector<std::size_t> ks{5, 10, 20, 30, 40};
  std::uint64_t sweep_seed = 0;
};

void run_sweep(const Work& w, const std::vector<std::uint64_t>& seeds, const SweepArgs& a) {
  std::vector<SelectorKind> kinds;
  for (const auto& s : a.selectors) {
    auto k = parse_selector(s);
    if (!k) throw Error("unknown selector '" + s + "'");
    kinds.push_back(*k);
  }
  for (auto k : a.ks)
    if (k == 0) throw Error("budget K must be positive");
  auto runs = w.runs(seeds);
  Loaded data(w);
  for (const auto& dir : runs) {
    TrainedRun run(dir);
    auto test = data.examples(Split::kTest, run.cfg.mask);
    auto cells = budget_sweep(*run.policy, *run.reader, test, kinds, a.ks, a.sweep_seed, run.cfg.max_length);
    const std::string name = "sweep_seed" + std::to_string(a.sweep_seed) + ".csv";
    detail::write_file((dir / name).string(), sweep_to_csv(cells));
    Manifest m;
    m.subcommand = "sweep";
    m.config = {{"selectors", a.selectors}, {"K", a.ks}};
    m.seeds = {run.cfg.seed, a.sweep_seed};
    m.add_input((dir / "selector.ckpt").string());
    m.add_input((dir / "reader.ckpt").string());
    m.add_output((dir / name).string());
    save_manifest(m, dir);
    std::cout << dir.filename().string() << '\n' << sweep_to_csv(cells);
  }
}

void run_enrich(const Work& w, const std::vector<std::uint64_t>& seeds) {
  auto runs = w.runs(seeds);
  Loaded data(w);
  std::optional<SynthAnnotations> truth;
  if (fs::exists(w.root / "annotations.json"))
    truth = SynthAnnotations::from_json(json::parse(detail::read_file(w.path("annotations.json"))));
  const double horizon = data.cohort.horizon;
  std::vector<std::pair<std::string, Attribute>> attrs{
      {"recency", [horizon](const EvidenceUnit& u) { return recency_bin(u, horizon); }},
      {"W", [](const EvidenceUnit& u) { return detail::format_shortest(u.source.w); }},
      {"has_gloss", [](const EvidenceUnit& u) { return std::string(u.g ? "1" : "0"); }}};
  if (truth)
    attrs.emplace_back("signal", [&truth](const EvidenceUnit& u) {
      return std::string(truth->window_has_signal(u.source.patient_id, u.source.t, u.source.w) ? "signal" : "none");
    });
  std::vector<std::pair<std::string, std::vector<std::string>>> declared{{"recency", {">=0.9", "0.6-0.9", "<0.6"}},
                                                                         {"has_gloss", {"0", "1"}}};
  for (const auto& dir : runs) {
    TrainedRun run(dir);
    auto test = data.examples(Split::kTest, run.cfg.mask);
    std::vector<const std::vector<EvidenceUnit>*> pools;
    std::vector<std::vector<std::size_t>> sel;
    for (const auto& ex : test) {
      if (ex.pool_size() == 0) continue;
      auto m = patient_margins(*run.policy, ex);
      pools.push_back(ex.pool);
      sel.push_back(assemble<std::mt19937_64>(m, ex.keys, SelectMode::kGreedy, run.cfg.k, run.cfg.k_min).selected);
    }
    auto rows = enrichment(pools, sel, attrs, declared);
    detail::write_file((dir / "enrichment.csv").string(), enrichment_to_csv(rows));
    Manifest m;
    m.subcommand = "enrich";
    m.config = run.cfg.to_json();
    m.seeds = {run.cfg.seed};
    m.add_input((dir / "selector.ckpt").string());
    m.add_output((dir / "enrichment.csv").string());
    save_manifest(m, dir);
    std::cout << dir.filename().string() << '\n' << enrichment_to_csv(rows);
  }
}

void run_explain(const Work& w, const std::vector<std::uint64_t>& seeds, const std::string& patient, std::size_t top) {
  auto runs = w.runs(seeds);
  Loaded data(w);
  const auto* rec = data.cohort.find(patient);
  if (!rec) throw Error("unknown patient '" + patient + "'");
  for (const auto& dir : runs) {
    TrainedRun run(dir);
    auto exs = data.examples(data.cohort.split_of(patient), run.cfg.mask);
    auto it = std::find_if(exs.begin(), exs.end(), [&](const PatientExample& e) { return e.id == patient; });
    auto cards = explain(*run.policy, *it, run.cfg, top);
    auto m = patient_margins(*run.policy, *it);
    std::vector<std::size_t> selected;
    if (!m.empty()) selected = assemble<std::mt19937_64>(m, it->keys, SelectMode::kGreedy, run.cfg.k, run.cfg.k_min).selected;
    const double p = run.reader->predict(assemble_selected(*it, selected, run.cfg.max_length)).prob;
    ojson out{{"patient", patient}, {"label", it->label}, {"prob", p}, {"selected", selected.size()}};
    auto arr = ojson::array();
    std::cout << dir.filename().string() << ": patient " << patient << " p=" << detail::format_fixed(p, 4)
              << " label=" << it->label << " |S|=" << selected.size() << '\n';
    for (const auto& c : cards) {
      arr.push_back(c.to_json());
      std::cout << c.render();
    }
    out["cards"] = std::move(arr);
    const std::string name = "explain_" + patient + ".json";
    detail::write_file((dir / name).string(), out.dump(2) + "\n");
    Manifest man;
    man.subcommand = "explain";
    man.config = {{"patient", patient}, {"top", top}};
    man.seeds = {run.cfg.seed};
    man.add_input((dir / "selector.ckpt").string());
    man.add_output((dir / name).string());
    save_manifest(man, dir);
  }
}

void run_xgb_control(const Work& w) {
  auto cohort = w.cohort();
  auto bank = w.bank(cohort.horizon);
  auto ens = w.ensembles(bank);
  ojson out = ojson::object();
  for (auto mode : {AggregateMode::kMean, AggregateMode::kMax}) {
    auto agg = xgb_aggregate(bank, ens, mode);
    auto collect = [&](Split s, std::vector<double>& scores, std::vector<int>& labels) {
      for (const auto* r : cohort.in_split(s)) {
        auto it = agg.find(r->id);
        scores.push_back(it == agg.end() ? cohort.base_rate() : it->second);
        labels.push_back(r->label);
      }
    };
    std::vector<double> sv, st;
    std::vector<int> lv, lt;
    collect(Split::kVal, sv, lv);
    collect(Split::kTest, st, lt);
    const double thr = f1_at_best_threshold(sv, lv).threshold;
    const char* name = mode == AggregateMode::kMean ? "mean" : "max";
    out[name] = metric_report(st, lt, thr).to_json();
    std::cout << "xgb-" << name << ": test AUROC " << detail::format_fixed(out[name]["auroc"].get<double>(), 4)
              << ", AUPRC " << detail::format_fixed(out[name]["auprc"].get<double>(), 4) << '\n';
  }
  detail::write_file(w.path("xgb_control.json"), out.dump(2) + "\n");
  Manifest m;
  m.subcommand = "xgb-control";
  m.add_input(w.path("bank.csv"));
  m.add_output(w.path("xgb_control.json"));
  save_manifest(m, w.root);
}

// `--config file.json` entries are appended after the command line, so they
// take precedence over flags given there.
std::vector<std::string> with_config(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  json cfg = json::parse(detail::read_file(path));
  if (!cfg.is_object()) throw Error("config file must hold a JSON object");
  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = "--" + key;
    if (value.is_boolean()) {
      if (value.get<bool>()) args.push_back(flag);
    } else if (value.is_array()) {
      std::string joined;
      for (const auto& v : value) joined += (joined.empty() ? "" : ",") + (v.is_string() ? v.get<std::string>() : v.dump());
      args.push_back(flag);
      args.push_back(joined);
    } else {
      args.push_back(flag);
      args.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
  return args;
}

// Removes `--name value` and `--name=value` from `args`, returning the last value.
std::optional<std::string> take_option(std::vector<std::string>& args, const std::string& name) {
  std::optional<std::string> value;
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == name && i + 1 < args.size()) {
      value = args[++i];
    } else if (args[i].rfind(name + "=", 0) == 0) {
      value = args[i].substr(name.size() + 1);
    } else {
      kept.push_back(args[i]);
    }
  }
  args = std::move(kept);
  return value;
}

// `--replay manifest.json` reruns the recorded command line against `--work`.
std::vector<std::string> resolve_args(int argc, char** argv) {
  auto args = with_config(argc, argv);
  take_option(args, "--config");
  auto work = take_option(args, "--work");
  if (auto replay = take_option(args, "--replay")) {
    if (!args.empty()) throw Error("--replay takes no other arguments besides --work");
    auto m = json::parse(detail::read_file(*replay));
    if (!m.contains("args")) throw Error(*replay + " records no command line");
    args = m.at("args").get<std::vector<std::string>>();
  }
  g_args = args;
  if (work) args.insert(args.begin(), {"--work", *work});
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tree-path evidence pipeline for irregular clinical time series"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string work = "work";
  std::string config_path;
  app.add_option("--work", work, "Work directory holding all artifacts")->capture_default_str();
  app.add_option("--config", config_path, "JSON file whose entries override command-line flags");
  std::string replay_path;
  app.add_option("--replay", replay_path, "Rerun the command recorded in a manifest");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic cohort");
  synth->add_option("--n-patients", sa.n)->capture_default_str();
  synth->add_option("--seed", sa.seed)->capture_default_str();
  synth->add_option("--prevalence", sa.prevalence)->capture_default_str();
  synth->add_option("--horizon", sa.horizon)->capture_default_str();
  synth->add_option("--effect", sa.effect, "Scale applied to every pattern shift")->capture_default_str();

  IngestArgs ia;
  auto* ingest = app.add_subcommand("ingest", "Load and validate an event-stream cohort");
  ingest->add_option("--input", ia.input)->required();
  ingest->add_option("--format", ia.format)->capture_default_str();
  ingest->add_option("--sidecar", ia.sidecar, "Statics/labels CSV for the long CSV format");
  ingest->add_option("--horizon", ia.horizon)->capture_default_str();
  ingest->add_option("--split-seed", ia.split_seed)->capture_default_str();
  ingest->add_option("--vocabulary", ia.vocabulary)->delimiter(',');
  ingest->add_option("--min-events", ia.min_events)->capture_default_str();

  WindowArgs wa;
  auto* windows = app.add_subcommand("build-windows", "Summarize every patient over the window grid");
  windows->add_option("--windows", wa.windows)->delimiter(',')->capture_default_str();
  windows->add_flag("--include-horizon-endpoint", wa.include_endpoint);

  BoostConfig bc;
  auto* trees = app.add_subcommand("train-trees", "Fit one boosted ensemble per window size");
  trees->add_option("--max-depth", bc.max_depth)->capture_default_str();
  trees->add_option("--n-rounds", bc.n_rounds)->capture_default_str();
  trees->add_option("--learning-rate", bc.learning_rate)->capture_default_str();
  trees->add_option("--subsample", bc.subsample)->capture_default_str();
  trees->add_option("--colsample", bc.colsample_per_tree)->capture_default_str();
  trees->add_option("--min-child-weight", bc.min_child_weight)->capture_default_str();
  trees->add_option("--early-stopping", bc.early_stopping_patience)->capture_default_str();
  trees->add_option("--tree-seed", bc.seed)->capture_default_str();

  EvidenceArgs ea;
  auto* evidence = app.add_subcommand("build-evidence", "Verbalize activated leaves into candidate pools");
  evidence->add_option("--rl_top_k", ea.top_m, "Leaves kept per summary row (M)")->capture_default_str();
  evidence->add_option("--glosser", ea.glosser, "null, template or external")->capture_default_str();
  evidence->add_option("--gloss-cache", ea.gloss_cache, "Annotation cache for the external glosser");
  evidence->add_option("--ranges", ea.ranges, "Declared feasible feature ranges (JSON)");
  evidence->add_option("--task", ea.task);

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Jointly train the evidence selector and reader");
  auto& tc = ta.cfg;
  train->add_option("--vb_budget", tc.k, "Evidence budget K")->capture_default_str();
  train->add_option("--rl_min_sel_count", tc.k_min, "Selection floor K_min")->capture_default_str();
  train->add_option("--rl_top_k", tc.top_m, "Leaves per row used to build the pools (recorded)")->capture_default_str();
  train->add_option("--batch_size", tc.batch_size)->capture_default_str();
  train->add_option("--lr", tc.reader_lr, "Reader learning rate")->capture_default_str();
  train->add_option("--rl_lr", tc.selector_lr, "Selector learning rate")->capture_default_str();
  train->add_option("--weight-decay", tc.weight_decay)->capture_default_str();
  train->add_option("--lambda-sel", tc.lambda_sel)->capture_default_str();
  train->add_option("--lambda-ent", tc.lambda_ent)->capture_default_str();
  train->add_option("--eps", tc.eps)->capture_default_str();
  train->add_option("--epochs", tc.max_epochs)->capture_default_str();
  train->add_option("--patience", tc.patience)->capture_default_str();
  train->add_option("--warmup-epochs", tc.reader_warmup_epochs)->capture_default_str();
  train->add_option("--max_length", tc.max_length)->capture_default_str();
  train->add_option("--seed", tc.seed, "First seed")->capture_default_str();
  train->add_option("--seed_num", ta.seed_num, "Number of consecutive seeds")->capture_default_str();
  train->add_option("--selector-dim", tc.selector.model_dim)->capture_default_str();
  train->add_option("--selector-ff", tc.selector.ff_dim)->capture_default_str();
  train->add_option("--selector-layers", tc.selector.layers)->capture_default_str();
  train->add_option("--reader-dim", tc.reader.dim)->capture_default_str();
  train->add_option("--reader-hidden", tc.reader.hidden)->capture_default_str();
  train->add_option("--reader-buckets-log2", tc.reader.buckets_log2)->capture_default_str();
  train->add_flag("--deterministic", ta.deterministic, "Single-threaded, bit-reproducible run");
  bool post_cap = false;
  train->add_flag("--post-cap-loss", post_cap, "Selector log-likelihood on post-floor/cap actions");
  train->add_flag("--mask-embedding", tc.mask.embedding);
  train->add_flag("--mask-leaf-stats", tc.mask.leaf_stats);
  train->add_flag("--mask-gloss", tc.mask.gloss);

  std::vector<std::uint64_t> seeds;
  auto add_seeds = [&](CLI::App* sub) {
    sub->add_option("--seeds", seeds, "Seed runs to use (default: all trained)")->delimiter(',');
  };
  auto* evaluate = app.add_subcommand("evaluate", "Greedy-mode test metrics per trained seed");
  add_seeds(evaluate);

  SweepArgs swa;
  auto* sweep = app.add_subcommand("sweep", "Matched-budget selector comparison");
  add_seeds(sweep);
  sweep->add_option("--selectors", swa.selectors)->delimiter(',')->capture_default_str();
  sweep->add_option("--ks", swa.ks)->delimiter(',')->capture_default_str();
  sweep->add_option("--sweep-seed", swa.sweep_seed, "Seed of the random selector")->capture_default_str();

  auto* enrich = app.add_subcommand("enrich", "Category enrichment of selected evidence");
  add_seeds(enrich);

  std::string patient;
  std::size_t top = 3;
  auto* expl = app.add_subcommand("explain", "Evidence cards for one patient");
  add_seeds(expl);
  expl->add_option("--patient", patient)->required();
  expl->add_option("--top", top)->capture_default_str();

  auto* xgb = app.add_subcommand("xgb-control", "Tree-only mean/max aggregation controls");

  try {
    auto args = resolve_args(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  tc.loss_on_raw_actions = !post_cap;

  try {
    Work w{work};
    auto* sub = app.get_subcommands().front();
    if (sub != ingest && sub != synth && !fs::exists(w.root))
      throw MissingArtifact("work directory " + work + " does not exist; run `treetext synth` or `treetext ingest` first");
    fs::create_directories(w.root);
    if (sub == synth) run_synth(w, sa);
    else if (sub == ingest) run_ingest(w, ia);
    else if (sub == windows) run_build_windows(w, wa);
    else if (sub == trees) run_train_trees(w, bc);
    else if (sub == evidence) run_build_evidence(w, ea);
    else if (sub == train) {
      tc.validate();
      run_train(w, ta);
    } else if (sub == evaluate) run_evaluate(w, seeds);
    else if (sub == sweep) run_sweep(w, seeds, swa);
    else if (sub == enrich) run_enrich(w, seeds);
    else if (sub == expl) run_explain(w, seeds, patient, top);
    else if (sub == xgb) run_xgb_control(w);
  } catch (const MissingArtifact& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
