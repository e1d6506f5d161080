// entlab command-line entry point.

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <random>

#include "entlab/checkpoint.hpp"
#include "entlab/config_json.hpp"
#include "entlab/corpus.hpp"
#include "entlab/entropy.hpp"
#include "entlab/errors.hpp"
#include "entlab/gradcheck.hpp"
#include "entlab/io_util.hpp"
#include "entlab/pi_cost.hpp"
#include "entlab/trainer.hpp"

using namespace entlab;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitDiverged = 2;

std::uint64_t default_seed() {
  if (const char* env = std::getenv("ENTLAB_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw UsageError(std::string("ENTLAB_SEED is not an unsigned integer: ") + env);
    return v;
  }
  return 0;
}

void print_header(const std::string& command, const nlohmann::json& resolved, std::uint64_t seed) {
  std::cout << "entlab " << command << "\nconfig: " << resolved.dump() << "\nseed: " << seed << "\n";
}

Tokenizer checkpoint_tokenizer(const Checkpoint& ckpt) {
  if (ckpt.tokenizer.is_object() && ckpt.tokenizer.contains("tokenizer")) return Tokenizer::from_json(ckpt.tokenizer);
  return Tokenizer::byte();
}

std::vector<int> read_tokens(const std::string& path, const Tokenizer& tok) { return tok.encode(read_file(path)); }

// ---- commands ----

struct TrainArgs {
  std::string config;
  std::string resume;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(a.config));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in '" + a.config + "' at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  TrainConfig cfg = TrainConfig::from_json(j);
  if (a.seed) cfg.seed = *a.seed;
  else if (!j.contains("seed")) cfg.seed = default_seed();
  if (cfg.corpus_path.empty()) throw ConfigError("invalid training config: corpus_path: required");

  TokenStream data = ingest(cfg.corpus_path, cfg.tokenizer, cfg.arch.context);
  cfg.arch.vocab_size = data.tokenizer.vocab_size();
  print_header("train", cfg.to_json(), cfg.seed);
  std::cout << "corpus: " << data.tokens.size() << " tokens, vocab " << data.tokenizer.vocab_size() << "\n";

  Trainer trainer = a.resume.empty() ? Trainer(cfg, std::move(data))
                                     : Trainer::resume(cfg, std::move(data), read_checkpoint(a.resume));
  if (!a.resume.empty()) std::cout << "resumed at step " << trainer.step() << "\n";
  std::cout << std::setw(7) << "step" << std::setw(11) << "ce" << std::setw(11) << "reg" << std::setw(11) << "eval_ce"
            << std::setw(10) << "ppl" << std::setw(22) << "buckets" << std::setw(9) << "sec\n";
  const RunSummary summary = trainer.run([](const MetricRecord& r) {
    std::cout << std::setw(7) << r.step << std::fixed << std::setprecision(4) << std::setw(11) << r.ce_loss
              << std::setw(11) << r.reg_loss << std::setw(11) << r.eval_ce << std::setw(10) << std::exp(r.eval_ce)
              << "   " << std::setprecision(2) << r.bucket_fractions[0] << "/" << r.bucket_fractions[1] << "/"
              << r.bucket_fractions[2] << std::setprecision(1) << std::setw(11) << r.wall_seconds
              << (r.diverged ? "  DIVERGED" : "") << "\n"
              << std::defaultfloat << std::flush;
  });
  std::cout << "metrics: " << (fs::path(cfg.out_dir) / "metrics.jsonl").string() << "\n"
            << "checkpoint: " << (fs::path(cfg.out_dir) / "final").string() << "\n";
  if (summary.diverged) {
    std::cout << "training diverged at step " << summary.records.back().step << "\n";
    return kExitDiverged;
  }
  return kExitOk;
}

struct EvalArgs {
  std::string checkpoint, data, out;
  std::size_t windows = SIZE_MAX;
};

int cmd_eval(const EvalArgs& a) {
  const Checkpoint ckpt = read_checkpoint(a.checkpoint);
  const Tokenizer tok = checkpoint_tokenizer(ckpt);
  print_header("eval",
               {{"checkpoint", a.checkpoint}, {"data", a.data}, {"arch", ckpt.arch.describe()}, {"step", ckpt.step}},
               0);
  const Model model = load_model(ckpt);
  const EvalResult ev = evaluate(model, read_tokens(a.data, tok), ckpt.arch.context, a.windows);
  std::cout << std::setprecision(6) << "windows: " << ev.windows << "\neval_ce: " << ev.eval_ce
            << "\nperplexity: " << ev.perplexity << "\n";
  if (!a.out.empty()) {
    nlohmann::json j = {{"eval_ce", ev.eval_ce}, {"perplexity", ev.perplexity}, {"windows", ev.windows},
                        {"entropy", ev.entropy.values}};
    write_file_atomic(a.out, j.dump(2) + "\n");
  }
  return kExitOk;
}

struct AnalyzeArgs {
  std::string checkpoint, data, out, svg;
  std::size_t offset = 0;
};

int cmd_analyze(const AnalyzeArgs& a) {
  const Checkpoint ckpt = read_checkpoint(a.checkpoint);
  const Tokenizer tok = checkpoint_tokenizer(ckpt);
  print_header("analyze",
               {{"checkpoint", a.checkpoint}, {"data", a.data}, {"offset", a.offset}, {"arch", ckpt.arch.describe()}},
               0);
  Model model = load_model(ckpt);
  model.refine_spectral_estimates(30);
  const std::vector<int> ids = read_tokens(a.data, tok);
  const std::size_t T = ckpt.arch.context;
  if (ids.size() < a.offset + T)
    throw UsageError("data has " + std::to_string(ids.size()) + " tokens; a window at offset " +
                     std::to_string(a.offset) + " needs " + std::to_string(a.offset + T));
  const std::vector<int> window(ids.begin() + static_cast<std::ptrdiff_t>(a.offset),
                                ids.begin() + static_cast<std::ptrdiff_t>(a.offset + T));
  const EntropyMatrix em = model_entropy(model.trace(window));
  export_heatmap(em, a.out, HeatmapFormat::csv);
  if (!a.svg.empty()) export_heatmap(em, a.svg, HeatmapFormat::svg);
  const auto collapse = detect_collapse(em);
  const auto overload = detect_overload(em);
  std::cout << std::setprecision(4);
  for (std::size_t l = 0; l < em.layers; ++l) {
    std::cout << "layer " << l << ":";
    for (std::size_t h = 0; h < em.heads; ++h) std::cout << " " << std::setw(7) << em.at(l, h);
    std::cout << "   collapse " << collapse.per_layer[l] << "  overload " << overload.per_layer[l] << "\n";
  }
  std::cout << "log T = " << em.max_theoretical() << "\nwrote " << a.out << "\n";
  return kExitOk;
}

struct BucketsArgs {
  std::string entropy, out;
  std::size_t ctx = 0;
};

int cmd_buckets(const BucketsArgs& a) {
  print_header("buckets", {{"entropy", a.entropy}, {"ctx", a.ctx}}, 0);
  const EntropyMatrix em = read_entropy_csv(a.entropy, a.ctx);
  const BucketSummary b = bucket_fractions(em);
  const double m = b.reference_max;
  std::cout << std::setprecision(4) << "reference max entropy: " << m << "\n"
            << "[0, " << m / 4 << "):      " << b.fractions[0] << "\n"
            << "[" << m / 4 << ", " << 3 * m / 4 << "):  " << b.fractions[1] << "\n"
            << "[" << 3 * m / 4 << ", " << m << "]:  " << b.fractions[2] << "\n";
  const nlohmann::json j = {{"fractions", b.fractions}, {"reference_max", m}, {"heads", em.values.size()}};
  if (!a.out.empty()) write_file_atomic(a.out, j.dump(2) + "\n");
  std::cout << j.dump() << "\n";
  return kExitOk;
}

struct HeatmapArgs {
  std::string entropy, out;
  std::size_t ctx = 0;
};

int cmd_heatmap(const HeatmapArgs& a) {
  print_header("heatmap", {{"entropy", a.entropy}, {"out", a.out}, {"ctx", a.ctx}}, 0);
  const EntropyMatrix em = read_entropy_csv(a.entropy, a.ctx);
  export_heatmap(em, a.out, HeatmapFormat::svg);
  std::cout << "wrote " << a.out << " (" << em.layers << " x " << em.heads << ")\n";
  return kExitOk;
}

struct PiCostArgs {
  std::string arch = "sm_ln_g", cost_model, out;
  std::size_t layers = 12, heads = 12, dmodel = 768, ctx = 128;
};

std::string billions(std::uint64_t v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << static_cast<double>(v) / 1e9 << "B";
  return os.str();
}

int cmd_pi_cost(const PiCostArgs& a) {
  ArchConfig arch = ArchConfig::preset(a.arch);
  arch.layers = a.layers;
  arch.heads = a.heads;
  arch.d_model = a.dmodel;
  arch.context = a.ctx;
  arch.vocab_size = 50257;
  arch.validate();
  print_header("pi-cost", {{"arch", arch.describe()}, {"cost_model", a.cost_model.empty() ? "default" : a.cost_model}},
               0);
  const CostModel model = a.cost_model.empty() ? CostModel::calibrated_default() : CostModel::load(a.cost_model);
  const CostReport r = estimate(arch, model);
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string("n/a");
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << *v << "x";
    return os.str();
  };
  std::cout << std::fixed << std::setprecision(2) << "nonlinear ops:  " << r.inventory.describe() << "\n"
            << "FFN FLOPs:      " << billions(r.flop_count.ffn) << "\n"
            << "Attn FLOPs:     " << billions(r.flop_count.attn) << "\n"
            << "comm (GB):      " << r.est_comm_gb << "\n"
            << "latency (min):  " << r.est_latency_min << "\n"
            << "savings vs " << r.baseline << ": comm " << opt(r.comm_savings) << ", latency " << opt(r.latency_savings)
            << "\n"
            << std::defaultfloat;
  const std::string json = r.to_json().dump(2) + "\n";
  if (!a.out.empty()) write_file_atomic(a.out, json);
  else std::cout << json;
  return kExitOk;
}

struct GradcheckArgs {
  std::string op;
  int trials = 50;
  std::optional<std::uint64_t> seed;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  const std::uint64_t seed = a.seed ? *a.seed : (std::getenv("ENTLAB_SEED") ? default_seed() : 1234);
  print_header("gradcheck", {{"op", a.op.empty() ? "all" : a.op}, {"trials", a.trials}, {"tolerance", 1e-5}}, seed);
  const auto results =
      gradcheck::run_suite(a.op.empty() ? std::nullopt : std::optional<std::string>(a.op), a.trials, seed, 1e-5);
  bool ok = true;
  for (const auto& r : results) {
    std::cout << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(18) << r.name << std::right
              << " trials=" << r.trials << " max_rel_error=" << std::scientific << std::setprecision(2)
              << r.max_rel_error << std::defaultfloat << "\n";
    ok = ok && r.passed;
  }
  std::cout << (ok ? "all checks passed" : "gradient check FAILED") << "\n";
  return ok ? kExitOk : kExitUsage;
}

struct GenerateArgs {
  std::string checkpoint, prompt;
  std::size_t tokens = 64;
  double temp = 1.0;
  std::optional<std::uint64_t> seed;
};

int cmd_generate(const GenerateArgs& a) {
  const std::uint64_t seed = a.seed ? *a.seed : default_seed();
  if (a.temp < 0) throw UsageError("--temp must be >= 0");
  const Checkpoint ckpt = read_checkpoint(a.checkpoint);
  const Tokenizer tok = checkpoint_tokenizer(ckpt);
  print_header("generate",
               {{"checkpoint", a.checkpoint}, {"tokens", a.tokens}, {"temp", a.temp}, {"arch", ckpt.arch.describe()}},
               seed);
  Model model = load_model(ckpt);
  model.refine_spectral_estimates(30);
  std::vector<int> ids = tok.encode(a.prompt);
  if (ids.empty() && a.tokens > 0) throw UsageError("generation needs a non-empty prompt");
  std::mt19937_64 rng(seed);
  const std::size_t T = ckpt.arch.context;
  for (std::size_t n = 0; n < a.tokens; ++n) {
    const std::size_t start = ids.size() > T ? ids.size() - T : 0;
    const std::vector<std::vector<int>> batch{std::vector<int>(ids.begin() + static_cast<std::ptrdiff_t>(start), ids.end())};
    Graph g(false);
    const ModelOutput out = model.forward(g, batch, Phase::inference);
    const Tensor& logits = out.logits.value();
    const std::size_t V = logits.cols(), last = logits.rows() - 1;
    int next = 0;
    if (a.temp == 0.0) {
      for (std::size_t v = 1; v < V; ++v)
        if (logits(last, v) > logits(last, static_cast<std::size_t>(next))) next = static_cast<int>(v);
    } else {
      std::vector<double> w(V);
      double mx = -INFINITY;
      for (std::size_t v = 0; v < V; ++v) mx = std::max(mx, logits(last, v) / a.temp);
      for (std::size_t v = 0; v < V; ++v) w[v] = std::exp(logits(last, v) / a.temp - mx);
      std::discrete_distribution<int> dist(w.begin(), w.end());
      next = dist(rng);
    }
    ids.push_back(next);
  }
  std::string text;
  try {
    text = tok.decode(ids);
  } catch (const InputError&) {
    // Byte models can stop mid code point; show the bytes as they are.
    text = Tokenizer::byte().decode(ids);
  }
  std::cout << "---\n" << text << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-entropy transformer lab: training, entropy analysis and private-inference cost accounting"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* c_train = app.add_subcommand("train", "Train a model from a JSON config");
  c_train->add_option("--config", train.config, "Training config (JSON)")->required()->check(CLI::ExistingFile);
  c_train->add_option("--resume", train.resume, "Checkpoint directory to resume from")->check(CLI::ExistingDirectory);
  c_train->add_option("--seed", train.seed, "Override the config seed");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Held-out cross-entropy and perplexity of a checkpoint");
  c_eval->add_option("--checkpoint", eval.checkpoint)->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--data", eval.data, "Text file")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--windows", eval.windows, "Maximum number of windows");
  c_eval->add_option("--out", eval.out, "JSON result file");

  AnalyzeArgs analyze;
  auto* c_analyze = app.add_subcommand("analyze", "Per-head attention entropy of one window");
  c_analyze->add_option("--checkpoint", analyze.checkpoint)->required()->check(CLI::ExistingDirectory);
  c_analyze->add_option("--data", analyze.data, "Text file")->required()->check(CLI::ExistingFile);
  c_analyze->add_option("--out", analyze.out, "Entropy CSV")->required();
  c_analyze->add_option("--svg", analyze.svg, "Also write a heatmap");
  c_analyze->add_option("--offset", analyze.offset, "Token offset of the window");

  BucketsArgs buckets;
  auto* c_buckets = app.add_subcommand("buckets", "Entropy bucket fractions of an entropy CSV");
  c_buckets->add_option("--entropy", buckets.entropy)->required()->check(CLI::ExistingFile);
  c_buckets->add_option("--ctx", buckets.ctx, "Context length T the entropies were measured at");
  c_buckets->add_option("--out", buckets.out, "JSON result file");

  HeatmapArgs heatmap;
  auto* c_heatmap = app.add_subcommand("heatmap", "SVG heatmap of an entropy CSV");
  c_heatmap->add_option("--entropy", heatmap.entropy)->required()->check(CLI::ExistingFile);
  c_heatmap->add_option("--out", heatmap.out)->required();
  c_heatmap->add_option("--ctx", heatmap.ctx, "Context length T (sets the log T colour scale)");

  PiCostArgs pi;
  auto* c_pi = app.add_subcommand("pi-cost", "Nonlinear-op inventory, FLOPs and private-inference cost estimate");
  c_pi->add_option("--arch", pi.arch, "Architecture preset")->check(CLI::IsMember(ArchConfig::preset_names()));
  c_pi->add_option("--layers", pi.layers)->check(CLI::PositiveNumber);
  c_pi->add_option("--heads", pi.heads)->check(CLI::PositiveNumber);
  c_pi->add_option("--dmodel", pi.dmodel)->check(CLI::PositiveNumber);
  c_pi->add_option("--ctx", pi.ctx)->check(CLI::PositiveNumber);
  c_pi->add_option("--cost-model", pi.cost_model, "Cost model JSON")->check(CLI::ExistingFile);
  c_pi->add_option("--out", pi.out, "CostReport JSON file");

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  c_gc->add_option("--op", gc.op, "Run a single check")->check(CLI::IsMember(gradcheck::suite_names()));
  c_gc->add_option("--trials", gc.trials)->check(CLI::PositiveNumber);
  c_gc->add_option("--seed", gc.seed);

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Sample text from a checkpoint");
  c_gen->add_option("--checkpoint", gen.checkpoint)->required()->check(CLI::ExistingDirectory);
  c_gen->add_option("--prompt", gen.prompt)->required();
  c_gen->add_option("--tokens", gen.tokens);
  c_gen->add_option("--temp", gen.temp, "Sampling temperature (0: greedy)");
  c_gen->add_option("--seed", gen.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*c_train) return cmd_train(train);
    if (*c_eval) return cmd_eval(eval);
    if (*c_analyze) return cmd_analyze(analyze);
    if (*c_buckets) return cmd_buckets(buckets);
    if (*c_heatmap) return cmd_heatmap(heatmap);
    if (*c_pi) return cmd_pi_cost(pi);
    if (*c_gc) return cmd_gradcheck(gc);
    if (*c_gen) return cmd_generate(gen);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
