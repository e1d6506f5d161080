#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "entlab/checkpoint.hpp"
#include "entlab/io_util.hpp"
#include "entlab/trainer.hpp"

using namespace entlab;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " '" + std::string(ENTLAB_CLI) + "' " + args + " 2>&1";
  FILE* pipe = ::popen(cmd.c_str(), "r");
  CliResult r;
  if (!pipe) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path work_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("entlab_cli_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::string sample_corpus() { return (fs::path(ENTLAB_SOURCE_DIR) / "data" / "sample_corpus.txt").string(); }

nlohmann::json tiny_train_config(const fs::path& out) {
  return {{"arch", {{"preset", "sm_ln_g"}, {"L", 1}, {"H", 2}, {"d", 16}, {"T", 16}}},
          {"optimizer", {{"learning_rate", 3e-3}}},
          {"schedule", {{"total_steps", 8}, {"warmup_steps", 2}}},
          {"batch_size", 2},
          {"seed", 5},
          {"eval_interval", 4},
          {"eval_windows", 4},
          {"checkpoint_interval", 4},
          {"corpus_path", sample_corpus()},
          {"out_dir", out.string()}};
}

fs::path write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream(p) << j.dump(2);
  return p;
}

std::vector<MetricRecord> read_metrics(const fs::path& p) {
  std::vector<MetricRecord> out;
  std::istringstream lines(read_file(p));
  for (std::string line; std::getline(lines, line);)
    if (!line.empty()) out.push_back(MetricRecord::from_json(nlohmann::json::parse(line)));
  return out;
}

// Q and K zeroed: every attention row is uniform over its causal prefix.
fs::path zero_checkpoint(const fs::path& dir, std::size_t T) {
  ArchConfig a = ArchConfig::preset("sm_ln_g");
  a.layers = 2;
  a.heads = 3;
  a.d_model = 12;
  a.context = T;
  a.vocab_size = 256;
  Model m(a, 9);
  for (Parameter* p : m.parameters())
    if (p->name.find(".attn.q.") != std::string::npos || p->name.find(".attn.k.") != std::string::npos)
      p->value.fill(0.0);
  save_checkpoint(model_checkpoint(m, 0), dir);
  return dir;
}

}  // namespace

TEST(Cli, UnknownFlagIsAUsageError) {
  const CliResult r = run("pi-cost --bogus 3");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("bogus"), std::string::npos);
  EXPECT_EQ(run("").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
}

TEST(Cli, PiCostWritesReportJson) {
  const fs::path d = work_dir("pi");
  const CliResult r = run("pi-cost --arch smt_scfuffn --layers 12 --heads 12 --dmodel 768 --ctx 128 --out " +
                    q(d / "report.json"));
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("config:"), std::string::npos);
  EXPECT_NE(r.output.find("seed:"), std::string::npos);
  const auto j = nlohmann::json::parse(read_file(d / "report.json"));
  EXPECT_NEAR(j.at("savings").at("comm").get<double>(), 3.94, 0.05 * 3.94);
  EXPECT_NEAR(j.at("savings").at("latency").get<double>(), 1.72, 0.10 * 1.72);
}

TEST(Cli, PiCostPrintsJsonWithoutOut) {
  const CliResult r = run("pi-cost --arch sm_ln_g --layers 18 --heads 12 --dmodel 768 --ctx 128");
  ASSERT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("SM:216"), std::string::npos);
  EXPECT_NE(r.output.find("\"est_comm_gb\""), std::string::npos);
}

TEST(Cli, PiCostRejectsUnknownArch) { EXPECT_EQ(run("pi-cost --arch transformer_xl").code, 1); }

TEST(Cli, GradcheckAllPasses) {
  const CliResult r = run("gradcheck --trials 5");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("all checks passed"), std::string::npos);
  EXPECT_EQ(r.output.find("FAIL"), std::string::npos);
}

TEST(Cli, GradcheckSingleOp) {
  const CliResult r = run("gradcheck --op softmax --trials 5");
  ASSERT_EQ(r.code, 0) << r.output;
  std::size_t passes = 0;
  for (std::size_t at = r.output.find("PASS "); at != std::string::npos; at = r.output.find("PASS ", at + 1)) ++passes;
  EXPECT_EQ(passes, 1u);
  EXPECT_NE(r.output.find("PASS softmax"), std::string::npos);
  EXPECT_EQ(run("gradcheck --op cosine").code, 1);
}

TEST(Cli, BucketsAndHeatmapFromCsv) {
  const fs::path d = work_dir("buckets");
  std::ofstream(d / "e.csv") << "layer,head,entropy\n0,0,0.1\n0,1,1.0\n1,0,1.9\n1,1,2.0\n";
  const CliResult b = run("buckets --entropy " + q(d / "e.csv") + " --out " + q(d / "b.json"));
  ASSERT_EQ(b.code, 0) << b.output;
  const auto j = nlohmann::json::parse(read_file(d / "b.json"));
  const auto f = j.at("fractions").get<std::vector<double>>();
  EXPECT_DOUBLE_EQ(f[0], 0.25);
  EXPECT_DOUBLE_EQ(f[1], 0.25);
  EXPECT_DOUBLE_EQ(f[2], 0.5);

  const CliResult h = run("heatmap --entropy " + q(d / "e.csv") + " --out " + q(d / "e.svg") + " --ctx 8");
  ASSERT_EQ(h.code, 0) << h.output;
  const std::string svg = read_file(d / "e.svg");
  EXPECT_NE(svg.find("<svg"), std::string::npos);

  std::ofstream(d / "bad.csv") << "layer,head,entropy\n0,0,abc\n";
  EXPECT_EQ(run("buckets --entropy " + q(d / "bad.csv")).code, 1);
}

TEST(Cli, AnalyzeZeroWeightCheckpoint) {
  const fs::path d = work_dir("analyze");
  const std::size_t T = 16;
  zero_checkpoint(d / "ckpt", T);
  const CliResult r = run("analyze --checkpoint " + q(d / "ckpt") + " --data " + q(sample_corpus()) + " --out " +
                    q(d / "e.csv") + " --svg " + q(d / "e.svg"));
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string csv = read_file(d / "e.csv");
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    ++rows;
    const double v = std::stod(line.substr(line.rfind(',') + 1));
    EXPECT_NEAR(v, std::lgamma(T + 1.0) / T, 1e-8) << line;
  }
  EXPECT_EQ(rows, 6u);
  EXPECT_TRUE(fs::exists(d / "e.svg"));
  run("analyze --checkpoint " + q(d / "ckpt") + " --data " + q(sample_corpus()) + " --out " + q(d / "e2.csv"));
  EXPECT_EQ(read_file(d / "e2.csv"), csv);
}

TEST(Cli, AnalyzeRejectsShortData) {
  const fs::path d = work_dir("analyze_short");
  zero_checkpoint(d / "ckpt", 16);
  std::ofstream(d / "short.txt") << "abc";
  const CliResult r = run("analyze --checkpoint " + q(d / "ckpt") + " --data " + q(d / "short.txt") + " --out " +
                    q(d / "e.csv"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("error:"), std::string::npos);
}

TEST(Cli, MalformedConfigReportsPosition) {
  const fs::path d = work_dir("malformed");
  std::ofstream(d / "bad.json") << "{\"seed\": 3,\n \"batch_size\": }";
  const CliResult r = run("train --config " + q(d / "bad.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("at byte"), std::string::npos) << r.output;
}

TEST(Cli, InvalidConfigListsFields) {
  const fs::path d = work_dir("invalid");
  nlohmann::json j = tiny_train_config(d / "out");
  j["batch_size"] = "eight";
  j["optimizer"]["momentum"] = 0.9;
  const CliResult r = run("train --config " + q(write_json(d / "c.json", j)));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("batch_size"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("optimizer.momentum"), std::string::npos) << r.output;
}

TEST(Cli, TrainThenResumeMatches) {
  const fs::path d = work_dir("train");
  const CliResult full = run("train --config " + q(write_json(d / "full.json", tiny_train_config(d / "full"))));
  ASSERT_EQ(full.code, 0) << full.output;
  EXPECT_NE(full.output.find("seed: 5"), std::string::npos);
  const auto ref = read_metrics(d / "full" / "metrics.jsonl");
  ASSERT_EQ(ref.size(), 3u);  // steps 0, 4, 8
  ASSERT_TRUE(fs::exists(d / "full" / "step-4" / "manifest.json"));

  const CliResult resumed = run("train --config " + q(write_json(d / "resume.json", tiny_train_config(d / "resumed"))) +
                          " --resume " + q(d / "full" / "step-4"));
  ASSERT_EQ(resumed.code, 0) << resumed.output;
  EXPECT_NE(resumed.output.find("resumed at step 4"), std::string::npos);
  const auto got = read_metrics(d / "resumed" / "metrics.jsonl");
  ASSERT_FALSE(got.empty());
  EXPECT_EQ(got.back().step, 8u);
  EXPECT_NEAR(got.back().eval_ce, ref.back().eval_ce, 1e-9);
  EXPECT_NEAR(got.back().ce_loss, ref.back().ce_loss, 1e-9);
}

TEST(Cli, SeedFlagAndEnvironment) {
  const fs::path d = work_dir("seed");
  nlohmann::json j = tiny_train_config(d / "a");
  j.erase("seed");
  j["schedule"] = {{"total_steps", 2}, {"warmup_steps", 0}};
  const CliResult env = run("train --config " + q(write_json(d / "a.json", j)), "ENTLAB_SEED=77");
  ASSERT_EQ(env.code, 0) << env.output;
  EXPECT_NE(env.output.find("seed: 77"), std::string::npos);
  j["out_dir"] = (d / "b").string();
  const CliResult flag = run("train --seed 78 --config " + q(write_json(d / "b.json", j)), "ENTLAB_SEED=77");
  ASSERT_EQ(flag.code, 0) << flag.output;
  EXPECT_NE(flag.output.find("seed: 78"), std::string::npos);
  EXPECT_EQ(run("train --config " + q(d / "a.json"), "ENTLAB_SEED=x1").code, 1);
}

TEST(Cli, DivergenceExitsWithTwo) {
  const fs::path d = work_dir("diverge");
  nlohmann::json j = tiny_train_config(d / "out");
  j["optimizer"]["learning_rate"] = 1e300;
  j["optimizer"]["weight_decay"] = 0.0;
  j["schedule"]["warmup_steps"] = 0;
  j["schedule"]["decay"] = "constant";
  const CliResult r = run("train --config " + q(write_json(d / "c.json", j)));
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_NE(r.output.find("diverged"), std::string::npos);
  EXPECT_TRUE(fs::exists(d / "out" / "final" / "manifest.json"));
}

TEST(Cli, EvalReportsPerplexity) {
  const fs::path d = work_dir("eval");
  zero_checkpoint(d / "ckpt", 16);
  const CliResult r = run("eval --checkpoint " + q(d / "ckpt") + " --data " + q(sample_corpus()) +
                    " --windows 3 --out " + q(d / "r.json"));
  ASSERT_EQ(r.code, 0) << r.output;
  const auto j = nlohmann::json::parse(read_file(d / "r.json"));
  EXPECT_EQ(j.at("windows").get<std::size_t>(), 3u);
  EXPECT_NEAR(std::exp(j.at("eval_ce").get<double>()), j.at("perplexity").get<double>(), 1e-9);
}

TEST(Cli, GenerateEchoesPromptAndIsDeterministic) {
  const fs::path d = work_dir("generate");
  zero_checkpoint(d / "ckpt", 16);
  const std::string base = "generate --checkpoint " + q(d / "ckpt") + " --prompt 'hello there'";
  const CliResult echo = run(base + " --tokens 0");
  ASSERT_EQ(echo.code, 0) << echo.output;
  EXPECT_NE(echo.output.find("---\nhello there\n"), std::string::npos);
  const CliResult a = run(base + " --tokens 20 --seed 4"), b = run(base + " --tokens 20 --seed 4");
  ASSERT_EQ(a.code, 0) << a.output;
  EXPECT_EQ(a.output, b.output);
  EXPECT_EQ(run(base + " --temp -1").code, 1);
}

TEST(Cli, GenerateReproducesAMemorizedRepetition) {
  const fs::path d = work_dir("memorize");
  std::string text;
  for (int i = 0; i < 400; ++i) text += "ab";
  std::ofstream(d / "ab.txt") << text;
  nlohmann::json j = tiny_train_config(d / "out");
  j["corpus_path"] = (d / "ab.txt").string();
  j["tokenizer"] = "char";
  j["arch"]["T"] = 8;
  j["optimizer"]["learning_rate"] = 1e-2;
  j["schedule"] = {{"total_steps", 150}, {"warmup_steps", 10}};
  j["eval_interval"] = 150;
  const CliResult t = run("train --config " + q(write_json(d / "c.json", j)));
  ASSERT_EQ(t.code, 0) << t.output;
  const CliResult g = run("generate --checkpoint " + q(d / "out" / "final") + " --prompt abab --tokens 12 --temp 0");
  ASSERT_EQ(g.code, 0) << g.output;
  EXPECT_NE(g.output.find("---\nabababababababab\n"), std::string::npos) << g.output;
}
