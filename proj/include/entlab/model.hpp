#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "entlab/graph.hpp"
#include "entlab/ops.hpp"

namespace entlab {

enum class FfnKind { gelu, relu, identity, scaled_fused };
enum class NormAlternative { none, weight_norm, spectral_norm };
/// Which weight matrices a static normalization alternative applies to.
enum class NormTargets { qk, ffn, qk_ffn, qkv_ffn, qkvo_ffn };

std::string to_string(FfnKind k);
std::string to_string(NormAlternative n);
std::string to_string(NormTargets t);
FfnKind parse_ffn_kind(std::string_view s);
NormAlternative parse_norm_alternative(std::string_view s);
NormTargets parse_norm_targets(std::string_view s);

/// Offset added to softplus(tau) so temperatures stay strictly positive.
inline constexpr double kMinTemperature = 1e-4;
/// Lower bound on |alpha| where 1/alpha is taken.
inline constexpr double kMinFfnScale = 1e-6;

struct ArchConfig {
  FfnKind ffn_kind = FfnKind::gelu;
  bool use_layernorm = true;
  bool learnable_temperature = false;
  NormAlternative norm_alternative = NormAlternative::none;
  NormTargets norm_targets = NormTargets::qk_ffn;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t d_model = 128;
  std::size_t context = 64;
  std::size_t vocab_size = 256;
  /// Effective temperature at initialization when learnable_temperature.
  double temperature_init = 1e-2;

  std::size_t head_dim() const { return d_model / heads; }
  std::size_t ffn_hidden() const { return 4 * d_model; }
  /// Throws ConfigError on inconsistent settings.
  void validate() const;

  /// Table-1 style presets: sm_ln_g, sm_ln_r, sm_ln, sm_g, sm_r, sm,
  /// sm_scfuffn, smt_scfuffn. Dimensions keep their defaults.
  static ArchConfig preset(std::string_view name);
  static std::vector<std::string> preset_names();
  /// Preset name matching the nonlinearity flags, or a descriptive label.
  std::string name() const;
  std::string describe() const;

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Per-layer, per-head attention probabilities captured in one forward pass.
struct ForwardTrace {
  std::size_t batch = 0;
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t seq_len = 0;
  /// Indexed ((b * layers) + l) * heads + h; each [seq_len x seq_len].
  std::vector<Tensor> attention;
  /// [batch * seq_len x vocab]
  Tensor logits;

  const Tensor& at(std::size_t b, std::size_t l, std::size_t h) const {
    return attention[(b * layers + l) * heads + h];
  }
};

// ---- functional building blocks ----

struct AttentionResult {
  Var out;    // [n x d_k]
  Var probs;  // [n x n]
};

struct HeadParams {
  Var wq, wk, wv;  // [d x d_k]
};

/// Single causal head: softmax(xWq (xWk)^T / (t sqrt(d_k)) + M) xWv.
AttentionResult attention_head(Var x, const HeadParams& p, Mask mask, std::optional<Var> temperature_row);

struct MhaParams {
  Var wq, wk, wv, wo;  // [d x d]; head h owns columns [h d_k, (h+1) d_k)
  std::size_t heads = 1;
  /// [heads x >= seq_len] temperatures; nullopt means t = 1.
  std::optional<Var> temperatures;
};

struct MhaResult {
  Var out;
  /// Indexed b * heads + h.
  std::vector<Var> probs;
};

/// Multi-head attention over x = [batch * seq_len x d], attending within each
/// consecutive block of seq_len rows.
MhaResult mha(Var x, const MhaParams& p, Mask mask, std::size_t seq_len);

struct FfnParams {
  std::optional<Var> w_in;   // [d x 4d]
  std::optional<Var> w_out;  // [4d x d]
  std::optional<Var> w_fused;  // [d x d]
};

Var ffn(Var x, const FfnParams& p, FfnKind kind);

struct BlockParams {
  std::optional<Var> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  MhaParams attn;
  FfnParams ffn;
  std::optional<Var> alpha, beta;  // scaled_fused only
};

struct BlockResult {
  Var out;
  std::vector<Var> probs;
};

/// Pre-LN transformer block. Without LayerNorm the normalizations are
/// identities; scaled_fused combines as beta * x_sa + ffn(x_sa) / alpha.
BlockResult block_forward(Var x_in, const BlockParams& p, const ArchConfig& cfg, std::size_t seq_len);

// ---- parameterized model ----

enum class Phase { train, inference };

struct ModelOutput {
  Var logits;
  std::vector<Var> attention;  // ((b * layers) + l) * heads + h
  std::size_t batch = 0;
  std::size_t layers = 0;
  std::size_t heads = 0;
  std::size_t seq_len = 0;

  Var attn(std::size_t b, std::size_t l, std::size_t h) const { return attention[(b * layers + l) * heads + h]; }
  ForwardTrace trace() const;
};

/// Named non-trainable tensor saved with the model.
struct Buffer {
  std::string name;
  Tensor value;
};

class Model {
 public:
  Model(ArchConfig cfg, std::uint64_t seed);

  const ArchConfig& config() const { return cfg_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  Parameter* find_parameter(std::string_view name);
  std::deque<Buffer>& buffers() { return buffers_; }
  const std::deque<Buffer>& buffers() const { return buffers_; }
  Buffer* find_buffer(std::string_view name);
  void zero_grad();

  /// Forward pass over a batch of equal-length token sequences (length
  /// <= context). In the train phase each spectrally normalized weight takes
  /// one power-iteration step; in inference the estimates stay frozen.
  ModelOutput forward(Graph& g, std::span<const std::vector<int>> batch, Phase phase = Phase::train);
  ForwardTrace trace(std::span<const int> tokens);

  /// Power-iteration refinement of every spectral-norm estimate.
  void refine_spectral_estimates(int iters);

  /// Effective temperatures softplus(tau) + kMinTemperature of one layer.
  Tensor temperatures(std::size_t layer) const;

 private:
  struct Linear {
    std::size_t weight = 0;             // plain weight or weight-norm direction
    std::optional<std::size_t> gain;    // weight-norm gain
    std::optional<std::size_t> u, v;    // spectral-norm buffers
  };
  struct Layer {
    Linear wq, wk, wv, wo;
    std::optional<std::size_t> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    std::optional<Linear> ffn_in, ffn_out, ffn_fused;
    std::optional<std::size_t> alpha, beta, tau;
  };

  std::size_t add_param(std::string name, Tensor value, bool decay);
  std::size_t add_buffer(std::string name, Tensor value);
  Linear make_linear(const std::string& name, std::size_t in, std::size_t out, bool normalized, std::mt19937_64& rng);
  Var linear_weight(Graph& g, const Linear& lin, Phase phase);

  ArchConfig cfg_;
  std::deque<Parameter> params_;
  std::deque<Buffer> buffers_;
  std::vector<Layer> layers_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, unembed_ = 0;
  std::optional<std::size_t> lnf_gain_, lnf_bias_;
};

}  // namespace entlab
