#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "entlab/checkpoint.hpp"
#include "entlab/corpus.hpp"
#include "entlab/entropy.hpp"
#include "entlab/model.hpp"
#include "entlab/regularizer.hpp"

namespace entlab {

struct OptimizerConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double weight_decay = 0.01;
  double grad_clip_norm = 1.0;
};

enum class DecayKind { cosine, constant };

struct ScheduleConfig {
  /// Defaults to 5% of total_steps when unset.
  std::optional<std::size_t> warmup_steps;
  std::size_t total_steps = 2000;
  DecayKind decay = DecayKind::cosine;

  std::size_t warmup() const { return warmup_steps ? *warmup_steps : total_steps / 20; }
};

struct TrainConfig {
  ArchConfig arch;
  RegConfig reg;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  std::size_t eval_interval = 100;
  std::string corpus_path;
  TokenizerKind tokenizer = TokenizerKind::byte;
  /// Where metrics.jsonl, config.json and checkpoints go.
  std::string out_dir = "runs/default";
  /// Held-out windows per evaluation.
  std::size_t eval_windows = 32;
  /// Tail fraction of the corpus kept out of training; 0 evaluates on the
  /// training stream.
  double holdout_fraction = 0.1;
  /// Save a checkpoint every this many steps (0: final checkpoint only).
  std::size_t checkpoint_interval = 0;

  nlohmann::json to_json() const;
  /// Throws ConfigError listing every offending field, unknown keys included.
  static TrainConfig from_json(const nlohmann::json& j);
  /// Parse errors carry the byte position.
  static TrainConfig load(const std::filesystem::path& path);
  void validate() const;
};

/// Learning rate of the n-th update (1-based): linear warmup, then cosine
/// decay to zero or constant.
double learning_rate_at(const TrainConfig& cfg, std::size_t update);

struct TemperatureStats {
  double min = 0.0, mean = 0.0, max = 0.0;
};

struct MetricRecord {
  std::uint64_t step = 0;
  double ce_loss = 0.0;
  double reg_loss = 0.0;
  double total_loss = 0.0;
  double eval_ce = 0.0;
  std::vector<double> layer_entropy;
  std::array<double, 3> bucket_fractions{};
  std::optional<TemperatureStats> temperature;
  double wall_seconds = 0.0;
  bool diverged = false;

  nlohmann::json to_json() const;
  static MetricRecord from_json(const nlohmann::json& j);
  /// Equality of everything except wall_seconds, comparing bit patterns.
  bool same_values(const MetricRecord& o) const;
};

struct EvalResult {
  double eval_ce = 0.0;
  double perplexity = 0.0;
  EntropyMatrix entropy;
  std::size_t windows = 0;
};

/// Mean token cross-entropy over up to max_windows non-overlapping windows
/// of length T from the start of the stream, on a copy of the model whose
/// spectral estimates are refined with 30 power iterations. The entropy
/// matrix comes from the final window. Throws UsageError when the stream
/// holds no complete window.
EvalResult evaluate(const Model& model, std::span<const int> held_out, std::size_t context,
                    std::size_t max_windows = SIZE_MAX);

struct StepLosses {
  double ce = 0.0;
  double reg = 0.0;
  double total = 0.0;
  /// Global gradient norm before clipping.
  double grad_norm = 0.0;
  bool diverged = false;
};

struct RunSummary {
  std::vector<MetricRecord> records;
  bool diverged = false;
  std::uint64_t steps = 0;
};

class Trainer {
 public:
  /// The architecture's vocab_size is taken from the tokenizer.
  Trainer(TrainConfig cfg, TokenStream data);

  const TrainConfig& config() const { return cfg_; }
  Model& model() { return model_; }
  const Model& model() const { return model_; }
  Parameter& thresholds() { return thresholds_; }
  const Parameter& thresholds() const { return thresholds_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }
  std::span<const int> train_tokens() const { return train_; }
  std::span<const int> held_out_tokens() const { return held_out_; }
  std::uint64_t step() const { return step_; }
  bool diverged() const { return diverged_; }

  /// Draws a batch and applies one update. A non-finite loss or gradient
  /// sets the divergence flag and leaves the parameters untouched.
  StepLosses train_step();
  StepLosses train_step(const Batch& batch);
  /// Losses of the next batch at the current parameters; no update, no RNG
  /// consumption.
  StepLosses probe_losses() const;
  /// Post-clip global norm of the last update.
  double last_clipped_norm() const { return last_clipped_norm_; }

  EvalResult evaluate() const;
  /// Record of the current state with the given training losses.
  MetricRecord record(const StepLosses& losses, double wall_seconds) const;

  Checkpoint checkpoint() const;
  void save(const std::filesystem::path& dir) const;
  /// Rebuilds a trainer mid-run; the checkpoint must come from the same
  /// architecture and tokenizer.
  static Trainer resume(TrainConfig cfg, TokenStream data, const Checkpoint& ckpt);

  /// Trains to total_steps (or divergence). Records are emitted at step 0,
  /// every eval_interval, at the last step and at divergence. With
  /// write_outputs, metrics.jsonl and config.json are rewritten atomically in
  /// out_dir after every record, and checkpoints go to out_dir/final (and
  /// out_dir/step-N when checkpoint_interval is set).
  RunSummary run(const std::function<void(const MetricRecord&)>& on_record = {}, bool write_outputs = true);

 private:
  std::vector<Parameter*> trainable();
  void apply_update(double lr);

  TrainConfig cfg_;
  Tokenizer tokenizer_;
  std::vector<int> train_;
  std::vector<int> held_out_;
  Model model_;
  Parameter thresholds_;
  std::vector<Tensor> adam_m_, adam_v_;
  std::uint64_t step_ = 0;
  std::mt19937_64 rng_;
  bool diverged_ = false;
  double last_clipped_norm_ = 0.0;
  double wall_offset_ = 0.0;
  std::vector<MetricRecord> history_;
};

std::string rng_to_string(const std::mt19937_64& rng);
std::mt19937_64 rng_from_string(const std::string& s);

}  // namespace entlab
