#include "entlab/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <sstream>

#include "entlab/errors.hpp"

namespace entlab {

std::string to_string(FfnKind k) {
  switch (k) {
    case FfnKind::gelu: return "gelu";
    case FfnKind::relu: return "relu";
    case FfnKind::identity: return "identity";
    case FfnKind::scaled_fused: return "scaled_fused";
  }
  return "?";
}

std::string to_string(NormAlternative n) {
  switch (n) {
    case NormAlternative::none: return "none";
    case NormAlternative::weight_norm: return "weight_norm";
    case NormAlternative::spectral_norm: return "spectral_norm";
  }
  return "?";
}

std::string to_string(NormTargets t) {
  switch (t) {
    case NormTargets::qk: return "qk";
    case NormTargets::ffn: return "ffn";
    case NormTargets::qk_ffn: return "qk_ffn";
    case NormTargets::qkv_ffn: return "qkv_ffn";
    case NormTargets::qkvo_ffn: return "qkvo_ffn";
  }
  return "?";
}

FfnKind parse_ffn_kind(std::string_view s) {
  if (s == "gelu") return FfnKind::gelu;
  if (s == "relu") return FfnKind::relu;
  if (s == "identity") return FfnKind::identity;
  if (s == "scaled_fused") return FfnKind::scaled_fused;
  throw ConfigError("unknown ffn_kind '" + std::string(s) + "'");
}

NormAlternative parse_norm_alternative(std::string_view s) {
  if (s == "none") return NormAlternative::none;
  if (s == "weight_norm") return NormAlternative::weight_norm;
  if (s == "spectral_norm") return NormAlternative::spectral_norm;
  throw ConfigError("unknown norm_alternative '" + std::string(s) + "'");
}

NormTargets parse_norm_targets(std::string_view raw) {
  // Also accepts the table spelling, e.g. "QKV+FFN".
  std::string s(raw);
  for (char& c : s) c = c == '+' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (s == "qk") return NormTargets::qk;
  if (s == "ffn") return NormTargets::ffn;
  if (s == "qk_ffn") return NormTargets::qk_ffn;
  if (s == "qkv_ffn") return NormTargets::qkv_ffn;
  if (s == "qkvo_ffn") return NormTargets::qkvo_ffn;
  throw ConfigError("unknown norm target set '" + std::string(raw) + "'");
}

void ArchConfig::validate() const {
  std::vector<std::string> bad;
  if (heads == 0) bad.push_back("heads must be positive");
  if (d_model == 0) bad.push_back("d_model must be positive");
  if (heads && d_model % heads != 0) bad.push_back("d_model must be divisible by heads");
  if (context == 0) bad.push_back("context must be positive");
  if (vocab_size == 0) bad.push_back("vocab_size must be positive");
  if (use_layernorm && d_model < 2) bad.push_back("layernorm needs d_model >= 2");
  if (norm_alternative != NormAlternative::none && use_layernorm)
    bad.push_back("norm_alternative replaces LayerNorm and requires use_layernorm = false");
  if (learnable_temperature && !(temperature_init > kMinTemperature))
    bad.push_back("temperature_init must exceed " + std::to_string(kMinTemperature));
  if (!bad.empty()) {
    std::string msg = "invalid architecture:";
    for (auto& b : bad) msg += " " + b + ";";
    throw ConfigError(msg);
  }
}

namespace {
struct PresetFlags {
  const char* name;
  FfnKind ffn;
  bool ln;
  bool temp;
};
constexpr PresetFlags kPresets[] = {
    {"sm_ln_g", FfnKind::gelu, true, false},         {"sm_ln_r", FfnKind::relu, true, false},
    {"sm_ln", FfnKind::identity, true, false},       {"sm_g", FfnKind::gelu, false, false},
    {"sm_r", FfnKind::relu, false, false},           {"sm", FfnKind::identity, false, false},
    {"sm_scfuffn", FfnKind::scaled_fused, false, false}, {"smt_scfuffn", FfnKind::scaled_fused, false, true},
};
}  // namespace

ArchConfig ArchConfig::preset(std::string_view name) {
  for (const auto& p : kPresets) {
    if (name == p.name) {
      ArchConfig c;
      c.ffn_kind = p.ffn;
      c.use_layernorm = p.ln;
      c.learnable_temperature = p.temp;
      return c;
    }
  }
  std::string msg = "unknown architecture '" + std::string(name) + "' (expected one of:";
  for (const auto& p : kPresets) msg += std::string(" ") + p.name;
  throw ConfigError(msg + ")");
}

std::vector<std::string> ArchConfig::preset_names() {
  std::vector<std::string> out;
  for (const auto& p : kPresets) out.emplace_back(p.name);
  return out;
}

std::string ArchConfig::name() const {
  std::string base;
  for (const auto& p : kPresets)
    if (p.ffn == ffn_kind && p.ln == use_layernorm && p.temp == learnable_temperature) base = p.name;
  if (base.empty()) {
    base = std::string(learnable_temperature ? "smt" : "sm") + (use_layernorm ? "_ln" : "") + "_" + to_string(ffn_kind);
  }
  if (norm_alternative != NormAlternative::none) base += "+" + to_string(norm_alternative) + "(" + to_string(norm_targets) + ")";
  return base;
}

std::string ArchConfig::describe() const {
  std::ostringstream os;
  os << name() << " L=" << layers << " H=" << heads << " d=" << d_model << " T=" << context << " V=" << vocab_size;
  if (learnable_temperature) os << " t0=" << temperature_init;
  return os.str();
}

// ---- functional blocks ----

namespace {

AttentionResult attend(Var q, Var k, Var v, Mask mask, std::optional<Var> temperature, double scale) {
  Var probs = masked_temperature_softmax(matmul(q, transpose(k)), mask, temperature, scale);
  return {matmul(probs, v), probs};
}

std::optional<Var> temperature_row(const std::optional<Var>& temps, std::size_t head, std::size_t n) {
  if (!temps) return std::nullopt;
  const Tensor& t = temps->value();
  if (t.rank() != 2 || head >= t.rows() || n > t.cols())
    throw DimensionError("temperature table " + shape_str(t.shape()) + " too small for head " +
                         std::to_string(head) + ", length " + std::to_string(n));
  return slice(*temps, head, 1, 0, n);
}

}  // namespace

AttentionResult attention_head(Var x, const HeadParams& p, Mask mask, std::optional<Var> temperature_row) {
  const std::size_t dk = p.wq.value().cols();
  return attend(matmul(x, p.wq), matmul(x, p.wk), matmul(x, p.wv), mask, temperature_row,
                1.0 / std::sqrt(static_cast<double>(dk)));
}

MhaResult mha(Var x, const MhaParams& p, Mask mask, std::size_t seq_len) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || seq_len == 0 || xv.rows() % seq_len != 0)
    throw DimensionError("mha: input " + shape_str(xv.shape()) + " is not a stack of length-" +
                         std::to_string(seq_len) + " sequences");
  const std::size_t d = p.wq.value().cols();
  if (p.heads == 0 || d % p.heads != 0) throw ConfigError("mha: model width not divisible by head count");
  const std::size_t dk = d / p.heads;
  const std::size_t batch = xv.rows() / seq_len;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dk));
  Var q = matmul(x, p.wq), k = matmul(x, p.wk), v = matmul(x, p.wv);

  MhaResult res;
  std::vector<Var> rows;
  std::vector<Var> heads(p.heads);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t r0 = b * seq_len;
    for (std::size_t h = 0; h < p.heads; ++h) {
      auto a = attend(slice(q, r0, seq_len, h * dk, dk), slice(k, r0, seq_len, h * dk, dk),
                      slice(v, r0, seq_len, h * dk, dk), mask, temperature_row(p.temperatures, h, seq_len), sc);
      heads[h] = a.out;
      res.probs.push_back(a.probs);
    }
    rows.push_back(p.heads == 1 ? heads[0] : concat(heads, 1));
  }
  Var cat = batch == 1 ? rows[0] : concat(rows, 0);
  res.out = matmul(cat, p.wo);
  return res;
}

Var ffn(Var x, const FfnParams& p, FfnKind kind) {
  if (kind == FfnKind::scaled_fused) {
    if (!p.w_fused) throw ConfigError("scaled_fused FFN needs a fused d x d weight");
    return matmul(x, *p.w_fused);
  }
  if (!p.w_in || !p.w_out) throw ConfigError(to_string(kind) + " FFN needs input and output weights");
  Var h = matmul(x, *p.w_in);
  if (kind == FfnKind::gelu) h = gelu(h);
  if (kind == FfnKind::relu) h = relu(h);
  return matmul(h, *p.w_out);
}

BlockResult block_forward(Var x_in, const BlockParams& p, const ArchConfig& cfg, std::size_t seq_len) {
  auto norm = [&](Var x, const std::optional<Var>& gain, const std::optional<Var>& bias) {
    if (!cfg.use_layernorm) return x;
    if (!gain || !bias) throw ConfigError("LayerNorm configuration without LayerNorm parameters");
    return layernorm(x, *gain, *bias);
  };
  MhaResult att = mha(norm(x_in, p.ln1_gain, p.ln1_bias), p.attn, Mask::causal, seq_len);
  Var x_sa = add(x_in, att.out);
  Var f = ffn(norm(x_sa, p.ln2_gain, p.ln2_bias), p.ffn, cfg.ffn_kind);
  Var out;
  if (cfg.ffn_kind == FfnKind::scaled_fused) {
    if (!p.alpha || !p.beta) throw ConfigError("scaled_fused block needs alpha and beta");
    out = add(mul(*p.beta, x_sa), mul(reciprocal(*p.alpha, kMinFfnScale), f));
  } else {
    out = add(x_sa, f);
  }
  return {out, std::move(att.probs)};
}

// ---- model ----

ForwardTrace ModelOutput::trace() const {
  ForwardTrace t;
  t.batch = batch;
  t.layers = layers;
  t.heads = heads;
  t.seq_len = seq_len;
  t.attention.reserve(attention.size());
  for (const Var& a : attention) t.attention.push_back(a.value());
  t.logits = logits.value();
  return t;
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor unit_vector(std::size_t n, std::mt19937_64& rng) {
  Tensor t = normal_tensor({n}, 1.0, rng);
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  s = std::sqrt(s);
  for (double& v : t.data()) v /= s;
  return t;
}

constexpr double kInitStd = 0.02;

bool targets_qk(NormTargets t) { return t != NormTargets::ffn; }
bool targets_v(NormTargets t) { return t == NormTargets::qkv_ffn || t == NormTargets::qkvo_ffn; }
bool targets_o(NormTargets t) { return t == NormTargets::qkvo_ffn; }
bool targets_ffn(NormTargets t) { return t != NormTargets::qk; }

}  // namespace

std::size_t Model::add_param(std::string name, Tensor value, bool decay) {
  params_.emplace_back(std::move(name), std::move(value), decay);
  return params_.size() - 1;
}

std::size_t Model::add_buffer(std::string name, Tensor value) {
  buffers_.push_back({std::move(name), std::move(value)});
  return buffers_.size() - 1;
}

Model::Linear Model::make_linear(const std::string& name, std::size_t in, std::size_t out, bool normalized,
                                 std::mt19937_64& rng) {
  Linear lin;
  Tensor w = normal_tensor({in, out}, kInitStd, rng);
  const NormAlternative alt = normalized ? cfg_.norm_alternative : NormAlternative::none;
  if (alt == NormAlternative::weight_norm) {
    // Gains start at the column norms so the effective weight equals the draw.
    Tensor g({out});
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t j = 0; j < out; ++j) g[j] += w(i, j) * w(i, j);
    for (double& v : g.data()) v = std::sqrt(v);
    lin.weight = add_param(name + ".direction", std::move(w), true);
    lin.gain = add_param(name + ".gain", std::move(g), false);
  } else {
    lin.weight = add_param(name + ".weight", std::move(w), true);
    if (alt == NormAlternative::spectral_norm) {
      lin.u = add_buffer(name + ".sn_u", unit_vector(in, rng));
      lin.v = add_buffer(name + ".sn_v", unit_vector(out, rng));
    }
  }
  return lin;
}

Model::Model(ArchConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = cfg_.d_model, T = cfg_.context, H = cfg_.heads;
  tok_emb_ = add_param("embed.tokens", normal_tensor({cfg_.vocab_size, d}, kInitStd, rng), true);
  pos_emb_ = add_param("embed.positions", normal_tensor({T, d}, kInitStd, rng), true);
  const NormTargets tg = cfg_.norm_targets;
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    Layer layer;
    if (cfg_.use_layernorm) {
      layer.ln1_gain = add_param(p + "ln1.gain", Tensor({d}, 1.0), false);
      layer.ln1_bias = add_param(p + "ln1.bias", Tensor({d}, 0.0), false);
    }
    layer.wq = make_linear(p + "attn.q", d, d, targets_qk(tg), rng);
    layer.wk = make_linear(p + "attn.k", d, d, targets_qk(tg), rng);
    layer.wv = make_linear(p + "attn.v", d, d, targets_v(tg), rng);
    layer.wo = make_linear(p + "attn.o", d, d, targets_o(tg), rng);
    if (cfg_.learnable_temperature) {
      const double tau0 = std::log(std::expm1(cfg_.temperature_init - kMinTemperature));
      layer.tau = add_param(p + "attn.tau", Tensor({H, T}, tau0), false);
    }
    if (cfg_.use_layernorm) {
      layer.ln2_gain = add_param(p + "ln2.gain", Tensor({d}, 1.0), false);
      layer.ln2_bias = add_param(p + "ln2.bias", Tensor({d}, 0.0), false);
    }
    if (cfg_.ffn_kind == FfnKind::scaled_fused) {
      layer.ffn_fused = make_linear(p + "ffn.fused", d, d, targets_ffn(tg), rng);
      layer.alpha = add_param(p + "ffn.alpha", Tensor::scalar(1.0), false);
      layer.beta = add_param(p + "ffn.beta", Tensor::scalar(1.0), false);
    } else {
      layer.ffn_in = make_linear(p + "ffn.in", d, cfg_.ffn_hidden(), targets_ffn(tg), rng);
      layer.ffn_out = make_linear(p + "ffn.out", cfg_.ffn_hidden(), d, targets_ffn(tg), rng);
    }
    layers_.push_back(std::move(layer));
  }
  if (cfg_.use_layernorm) {
    lnf_gain_ = add_param("final_ln.gain", Tensor({d}, 1.0), false);
    lnf_bias_ = add_param("final_ln.bias", Tensor({d}, 0.0), false);
  }
  unembed_ = add_param("unembed.weight", normal_tensor({d, cfg_.vocab_size}, kInitStd, rng), true);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(&p);
  return out;
}

Parameter* Model::find_parameter(std::string_view name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Buffer* Model::find_buffer(std::string_view name) {
  for (auto& b : buffers_)
    if (b.name == name) return &b;
  return nullptr;
}

void Model::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

Var Model::linear_weight(Graph& g, const Linear& lin, Phase phase) {
  Parameter& w = params_[lin.weight];
  if (lin.gain) return weight_norm(g.param(w), g.param(params_[*lin.gain]));
  if (lin.u) {
    Tensor& u = buffers_[*lin.u].value;
    Tensor& v = buffers_[*lin.v].value;
    if (phase == Phase::train) power_iteration(w.value, u, v, 1);
    return spectral_normalize(g.param(w), u, v);
  }
  return g.param(w);
}

ModelOutput Model::forward(Graph& g, std::span<const std::vector<int>> batch, Phase phase) {
  if (batch.empty()) throw UsageError("forward pass over an empty batch");
  const std::size_t n = batch[0].size();
  if (n == 0 || n > cfg_.context)
    throw InputError("sequence length " + std::to_string(n) + " outside [1, " + std::to_string(cfg_.context) + "]");
  std::vector<int> ids, pos;
  for (const auto& seq : batch) {
    if (seq.size() != n) throw InputError("all sequences in a batch must have the same length");
    for (std::size_t i = 0; i < n; ++i) {
      if (seq[i] < 0 || static_cast<std::size_t>(seq[i]) >= cfg_.vocab_size)
        throw InputError("token id " + std::to_string(seq[i]) + " outside vocabulary of size " +
                         std::to_string(cfg_.vocab_size));
      ids.push_back(seq[i]);
      pos.push_back(static_cast<int>(i));
    }
  }
  Var x = add(gather_rows(g.param(params_[tok_emb_]), ids), gather_rows(g.param(params_[pos_emb_]), pos));

  ModelOutput out;
  out.batch = batch.size();
  out.layers = cfg_.layers;
  out.heads = cfg_.heads;
  out.seq_len = n;
  std::vector<std::vector<Var>> per_layer;
  for (const Layer& layer : layers_) {
    BlockParams bp;
    auto opt_param = [&](const std::optional<std::size_t>& idx) -> std::optional<Var> {
      if (!idx) return std::nullopt;
      return g.param(params_[*idx]);
    };
    bp.ln1_gain = opt_param(layer.ln1_gain);
    bp.ln1_bias = opt_param(layer.ln1_bias);
    bp.ln2_gain = opt_param(layer.ln2_gain);
    bp.ln2_bias = opt_param(layer.ln2_bias);
    bp.attn.wq = linear_weight(g, layer.wq, phase);
    bp.attn.wk = linear_weight(g, layer.wk, phase);
    bp.attn.wv = linear_weight(g, layer.wv, phase);
    bp.attn.wo = linear_weight(g, layer.wo, phase);
    bp.attn.heads = cfg_.heads;
    if (layer.tau) bp.attn.temperatures = add_scalar(softplus(g.param(params_[*layer.tau])), kMinTemperature);
    if (layer.ffn_fused) bp.ffn.w_fused = linear_weight(g, *layer.ffn_fused, phase);
    if (layer.ffn_in) bp.ffn.w_in = linear_weight(g, *layer.ffn_in, phase);
    if (layer.ffn_out) bp.ffn.w_out = linear_weight(g, *layer.ffn_out, phase);
    bp.alpha = opt_param(layer.alpha);
    bp.beta = opt_param(layer.beta);
    BlockResult br = block_forward(x, bp, cfg_, n);
    x = br.out;
    per_layer.push_back(std::move(br.probs));
  }
  if (cfg_.use_layernorm) x = layernorm(x, g.param(params_[*lnf_gain_]), g.param(params_[*lnf_bias_]));
  out.logits = matmul(x, g.param(params_[unembed_]));

  out.attention.reserve(out.batch * cfg_.layers * cfg_.heads);
  for (std::size_t b = 0; b < out.batch; ++b)
    for (std::size_t l = 0; l < cfg_.layers; ++l)
      for (std::size_t h = 0; h < cfg_.heads; ++h) out.attention.push_back(per_layer[l][b * cfg_.heads + h]);
  return out;
}

ForwardTrace Model::trace(std::span<const int> tokens) {
  Graph g(false);
  std::vector<std::vector<int>> batch{std::vector<int>(tokens.begin(), tokens.end())};
  return forward(g, batch, Phase::inference).trace();
}

void Model::refine_spectral_estimates(int iters) {
  auto refine = [&](const Linear& lin) {
    if (lin.u) power_iteration(params_[lin.weight].value, buffers_[*lin.u].value, buffers_[*lin.v].value, iters);
  };
  for (const Layer& l : layers_) {
    refine(l.wq);
    refine(l.wk);
    refine(l.wv);
    refine(l.wo);
    if (l.ffn_in) refine(*l.ffn_in);
    if (l.ffn_out) refine(*l.ffn_out);
    if (l.ffn_fused) refine(*l.ffn_fused);
  }
}

Tensor Model::temperatures(std::size_t layer) const {
  const Layer& l = layers_.at(layer);
  if (!l.tau) throw UsageError("model has no learnable temperatures");
  Tensor t = params_[*l.tau].value;
  for (double& v : t.data()) v = (v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v))) + kMinTemperature;
  return t;
}

}  // namespace entlab
