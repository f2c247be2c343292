#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(TREETEXT_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("treetext_cli_" + name);
  fs::remove_all(d);
  return d;
}

const char* kSmallTrain =
    " train --epochs 1 --warmup-epochs 1 --vb_budget 10 --rl_min_sel_count 2 --selector-dim 16 --selector-ff 32"
    " --selector-layers 1 --reader-dim 16 --reader-hidden 8 --reader-buckets-log2 12 --deterministic";

// Builds a small world once: synth through build-evidence.
class Pipeline : public ::testing::Test {
 protected:
  static fs::path dir;

  static void SetUpTestSuite() {
    dir = fresh_dir("pipeline");
    const std::string w = " --work " + dir.string();
    ASSERT_EQ(run(w + " synth --n-patients 150 --seed 3 --prevalence 0.3").code, 0);
    ASSERT_EQ(run(w + " build-windows --windows 8,16").code, 0);
    ASSERT_EQ(run(w + " train-trees --n-rounds 4").code, 0);
    auto r = run(w + " build-evidence --rl_top_k 3");
    ASSERT_EQ(r.code, 0) << r.out;
    r = run(w + kSmallTrain + " --seed 4");
    ASSERT_EQ(r.code, 0) << r.out;
  }

  std::string work() const { return " --work " + dir.string(); }
};
fs::path Pipeline::dir;

TEST_F(Pipeline, StagesWriteArtifactsAndManifests) {
  for (const char* f : {"cohort.jsonl", "cohort_meta.json", "annotations.json", "bank.csv", "trees/W8.json",
                        "trees/W16.json", "pools.jsonl", "leaf_cache.jsonl", "seed_4/selector.ckpt",
                        "seed_4/reader.ckpt", "seed_4/train_log.jsonl"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  for (const char* s : {"synth", "build-windows", "train-trees", "build-evidence"}) {
    auto m = json::parse(slurp(dir / ("manifest_" + std::string(s) + ".json")));
    EXPECT_EQ(m["subcommand"], s);
    EXPECT_EQ(m["tool"], "treetext");
    EXPECT_FALSE(m["outputs"].empty());
  }
  auto m = json::parse(slurp(dir / "seed_4/manifest_train.json"));
  EXPECT_EQ(m["seeds"], json::array({4}));
  EXPECT_EQ(m["config"]["K"], 10);
  EXPECT_EQ(m["config"]["M"], 5);
  EXPECT_TRUE(m["inputs"].contains("pools.jsonl"));
}

TEST_F(Pipeline, TopMIsRecordedInEvidenceManifest) {
  auto m = json::parse(slurp(dir / "manifest_build-evidence.json"));
  EXPECT_EQ(m["config"]["rl_top_k"], 3);
}

TEST_F(Pipeline, EvaluateSweepEnrichExplainXgb) {
  auto r = run(work() + " evaluate --seeds 4");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("test AUROC"), std::string::npos);
  auto metrics = json::parse(slurp(dir / "seed_4/metrics.json"));
  EXPECT_GE(metrics["test"]["auroc"].get<double>(), 0.0);
  EXPECT_LE(metrics["test"]["auroc"].get<double>(), 1.0);

  r = run(work() + " sweep --ks 3,6 --selectors ces_top,random_top");
  ASSERT_EQ(r.code, 0) << r.out;
  auto csv = slurp(dir / "seed_4/sweep_seed0.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);

  r = run(work() + " enrich");
  ASSERT_EQ(r.code, 0) << r.out;
  auto en = slurp(dir / "seed_4/enrichment.csv");
  EXPECT_NE(en.find("signal,signal"), std::string::npos);
  EXPECT_NE(en.find("recency,"), std::string::npos);

  std::ifstream in(dir / "cohort.jsonl");
  std::string line;
  std::getline(in, line);
  const std::string id = json::parse(line)["id"];
  r = run(work() + " explain --patient " + id + " --top 2");
  ASSERT_EQ(r.code, 0) << r.out;
  auto card = json::parse(slurp(dir / ("seed_4/explain_" + id + ".json")));
  EXPECT_EQ(card["patient"], id);
  EXPECT_LE(card["cards"].size(), 2u);

  r = run(work() + " xgb-control");
  ASSERT_EQ(r.code, 0) << r.out;
  auto x = json::parse(slurp(dir / "xgb_control.json"));
  EXPECT_TRUE(x.contains("mean"));
  EXPECT_TRUE(x.contains("max"));
}

TEST_F(Pipeline, UnknownSelectorAndPatientFail) {
  EXPECT_NE(run(work() + " sweep --selectors nope").code, 0);
  EXPECT_NE(run(work() + " explain --patient no_such_patient").code, 0);
}

TEST_F(Pipeline, ConfigFileOverridesFlags) {
  auto cfg = fs::temp_directory_path() / "treetext_cli_cfg.json";
  std::ofstream(cfg) << R"({"vb_budget": 12, "rl_min_sel_count": 3, "seed": 9})";
  auto r = run(work() + " --config " + cfg.string() + kSmallTrain);
  ASSERT_EQ(r.code, 0) << r.out;
  auto c = json::parse(slurp(dir / "seed_9/train_config.json"));
  EXPECT_EQ(c["K"], 12);
  EXPECT_EQ(c["K_min"], 3);
  fs::remove_all(dir / "seed_9");
}

TEST_F(Pipeline, DeterministicTrainIsByteIdentical) {
  auto other = fresh_dir("pipeline_copy");
  fs::create_directories(other);
  for (const char* f : {"cohort.jsonl", "cohort_meta.json", "bank.csv", "pools.jsonl"})
    fs::copy_file(dir / f, other / f);
  auto r = run(" --work " + other.string() + kSmallTrain + " --seed 4");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"selector.ckpt", "reader.ckpt", "train_log.jsonl", "train_config.json"})
    EXPECT_EQ(slurp(dir / "seed_4" / f), slurp(other / "seed_4" / f)) << f;
  fs::remove_all(other);
}

TEST_F(Pipeline, ReplayFromManifestReproducesOutputs) {
  auto other = fresh_dir("pipeline_replay");
  fs::create_directories(other);
  for (const char* f : {"cohort.jsonl", "cohort_meta.json", "bank.csv", "pools.jsonl"})
    fs::copy_file(dir / f, other / f);
  auto manifest = dir / "seed_4/manifest_train.json";
  EXPECT_FALSE(json::parse(slurp(manifest))["args"].empty());
  auto r = run(" --work " + other.string() + " --replay " + manifest.string());
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"selector.ckpt", "reader.ckpt", "train_log.jsonl", "manifest_train.json"})
    EXPECT_EQ(slurp(dir / "seed_4" / f), slurp(other / "seed_4" / f)) << f;
  EXPECT_NE(run(" --work " + other.string() + " --replay " + manifest.string() + " evaluate").code, 0);
  fs::remove_all(other);
}

TEST(Cli, MissingArtifactsNameTheProducer) {
  auto d = fresh_dir("missing");
  fs::create_directories(d);
  auto r = run("--work " + d.string() + " build-windows");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("cohort_meta.json"), std::string::npos);
  EXPECT_NE(r.out.find("ingest"), std::string::npos);

  r = run("--work " + d.string() + " evaluate");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.out.find("treetext train"), std::string::npos);

  r = run("--work " + (d / "nowhere").string() + " train-trees");
  EXPECT_EQ(r.code, 3);
  fs::remove_all(d);
}

TEST(Cli, IngestRoundTripsSynthCohort) {
  auto a = fresh_dir("ingest_a");
  auto b = fresh_dir("ingest_b");
  ASSERT_EQ(run("--work " + a.string() + " synth --n-patients 40 --seed 1").code, 0);
  auto r = run("--work " + b.string() + " ingest --input " + (a / "cohort.jsonl").string() +
               " --vocabulary HR,MAP,SBP,RR,Temp,SpO2,Lactate,WBC,Creatinine,GCS");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(a / "cohort.jsonl"), slurp(b / "cohort.jsonl"));
  EXPECT_TRUE(fs::exists(b / "filter_report.json"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Cli, BadInvocationsFail) {
  EXPECT_NE(run("").code, 0);
  EXPECT_NE(run("no-such-command").code, 0);
  auto d = fresh_dir("bad");
  EXPECT_NE(run("--work " + d.string() + " synth --n-patients abc").code, 0);
  EXPECT_NE(run("--work " + d.string() + " ingest").code, 0);
  EXPECT_NE(run("--work " + d.string() + " ingest --input /no/such/file.jsonl").code, 0);
  fs::remove_all(d);
}

TEST(Cli, HelpListsSubcommands) {
  auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* s : {"synth", "ingest", "build-windows", "train-trees", "build-evidence", "train", "evaluate",
                        "sweep", "enrich", "explain", "xgb-control"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
}

}  // namespace
