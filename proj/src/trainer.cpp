#include "entlab/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>

#include "entlab/config_json.hpp"
#include "entlab/errors.hpp"
#include "entlab/io_util.hpp"

namespace entlab {

namespace fs = std::filesystem;

// ---- config ----

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json sched = {{"total_steps", schedule.total_steps},
                          {"warmup_steps", schedule.warmup()},
                          {"decay", schedule.decay == DecayKind::cosine ? "cosine" : "constant"}};
  return {{"arch", arch_to_json(arch)},
          {"reg", reg_to_json(reg)},
          {"optimizer",
           {{"learning_rate", optimizer.learning_rate},
            {"beta1", optimizer.beta1},
            {"beta2", optimizer.beta2},
            {"eps_adam", optimizer.eps_adam},
            {"weight_decay", optimizer.weight_decay},
            {"grad_clip_norm", optimizer.grad_clip_norm}}},
          {"schedule", sched},
          {"batch_size", batch_size},
          {"seed", seed},
          {"eval_interval", eval_interval},
          {"corpus_path", corpus_path},
          {"tokenizer", to_string(tokenizer)},
          {"out_dir", out_dir},
          {"eval_windows", eval_windows},
          {"holdout_fraction", holdout_fraction},
          {"checkpoint_interval", checkpoint_interval}};
}

namespace {

void check_train_config(const TrainConfig& c, std::vector<std::string>& errors) {
  const auto& o = c.optimizer;
  if (o.learning_rate < 0) errors.push_back("optimizer.learning_rate: must be >= 0");
  if (!(o.beta1 >= 0 && o.beta1 < 1)) errors.push_back("optimizer.beta1: must lie in [0, 1)");
  if (!(o.beta2 >= 0 && o.beta2 < 1)) errors.push_back("optimizer.beta2: must lie in [0, 1)");
  if (!(o.eps_adam > 0)) errors.push_back("optimizer.eps_adam: must be positive");
  if (o.weight_decay < 0) errors.push_back("optimizer.weight_decay: must be >= 0");
  if (!(o.grad_clip_norm > 0)) errors.push_back("optimizer.grad_clip_norm: must be positive");
  if (!(c.schedule.total_steps > c.schedule.warmup()))
    errors.push_back("schedule.total_steps: must exceed warmup_steps (" + std::to_string(c.schedule.warmup()) + ")");
  if (c.batch_size < 1) errors.push_back("batch_size: must be >= 1");
  if (c.eval_interval < 1) errors.push_back("eval_interval: must be >= 1");
  if (c.eval_windows < 1) errors.push_back("eval_windows: must be >= 1");
  if (!(c.holdout_fraction >= 0 && c.holdout_fraction < 1)) errors.push_back("holdout_fraction: must lie in [0, 1)");
  if (c.reg.lambda < 0) errors.push_back("reg.lambda: must be >= 0");
  if (!(c.reg.gamma >= 0 && c.reg.gamma < 1)) errors.push_back("reg.gamma: must lie in [0, 1)");
  if (!(c.reg.threshold_init > 0 && c.reg.threshold_init < 1)) errors.push_back("reg.threshold_init: must lie in (0, 1)");
  if (c.arch.context < 2) errors.push_back("arch.T: must be >= 2");
}

}  // namespace

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  std::vector<std::string> errors;
  TrainConfig c;
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  FieldReader r(j, "", errors);
  if (const auto* a = r.object("arch")) c.arch = arch_from_json(*a, "arch", errors);
  if (const auto* g = r.object("reg")) c.reg = reg_from_json(*g, "reg", errors);
  if (const auto* o = r.object("optimizer")) {
    FieldReader ro(*o, "optimizer", errors);
    ro.read("learning_rate", c.optimizer.learning_rate);
    ro.read("beta1", c.optimizer.beta1);
    ro.read("beta2", c.optimizer.beta2);
    ro.read("eps_adam", c.optimizer.eps_adam);
    ro.read("weight_decay", c.optimizer.weight_decay);
    ro.read("grad_clip_norm", c.optimizer.grad_clip_norm);
    ro.reject_unknown();
  }
  if (const auto* s = r.object("schedule")) {
    FieldReader rs(*s, "schedule", errors);
    rs.read("total_steps", c.schedule.total_steps);
    if (rs.has("warmup_steps")) {
      std::size_t w = 0;
      const std::size_t before = errors.size();
      rs.read("warmup_steps", w);
      if (errors.size() == before) c.schedule.warmup_steps = w;
    } else {
      rs.accept("warmup_steps");
    }
    std::string decay = "cosine";
    rs.read("decay", decay);
    if (decay == "cosine") c.schedule.decay = DecayKind::cosine;
    else if (decay == "constant") c.schedule.decay = DecayKind::constant;
    else rs.fail("decay", "expected cosine or constant");
    rs.reject_unknown();
  }
  r.read("batch_size", c.batch_size);
  r.read("seed", c.seed);
  r.read("eval_interval", c.eval_interval);
  r.read("corpus_path", c.corpus_path);
  std::string tok = to_string(c.tokenizer);
  r.read("tokenizer", tok);
  try {
    c.tokenizer = parse_tokenizer_kind(tok);
  } catch (const ConfigError&) {
    r.fail("tokenizer", "expected byte or char");
  }
  r.read("out_dir", c.out_dir);
  r.read("eval_windows", c.eval_windows);
  r.read("holdout_fraction", c.holdout_fraction);
  r.read("checkpoint_interval", c.checkpoint_interval);
  r.reject_unknown();
  if (errors.empty()) check_train_config(c, errors);
  throw_if_errors("invalid training config", errors);
  return c;
}

TrainConfig TrainConfig::load(const fs::path& path) {
  const std::string text = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("malformed JSON in '" + path.string() + "' at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  return from_json(j);
}

void TrainConfig::validate() const {
  std::vector<std::string> errors;
  check_train_config(*this, errors);
  throw_if_errors("invalid training config", errors);
  arch.validate();
}

double learning_rate_at(const TrainConfig& cfg, std::size_t update) {
  const double lr = cfg.optimizer.learning_rate;
  const std::size_t warm = cfg.schedule.warmup();
  if (update <= warm && warm > 0) return lr * static_cast<double>(update) / static_cast<double>(warm);
  if (cfg.schedule.decay == DecayKind::constant) return lr;
  const double span = static_cast<double>(cfg.schedule.total_steps - warm);
  const double progress = std::min(1.0, static_cast<double>(update - warm) / span);
  return lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// ---- metric records ----

nlohmann::json MetricRecord::to_json() const {
  nlohmann::json j = {{"step", step},
                      {"ce_loss", ce_loss},
                      {"reg_loss", reg_loss},
                      {"total_loss", total_loss},
                      {"eval_ce", eval_ce},
                      {"layer_entropy", layer_entropy},
                      {"bucket_fractions", bucket_fractions},
                      {"wall_seconds", wall_seconds},
                      {"diverged", diverged}};
  j["temperature"] = temperature ? nlohmann::json{{"min", temperature->min}, {"mean", temperature->mean}, {"max", temperature->max}}
                                 : nlohmann::json(nullptr);
  return j;
}

MetricRecord MetricRecord::from_json(const nlohmann::json& j) {
  auto num = [&](const char* key) {
    const auto& v = j.at(key);
    return v.is_null() ? std::nan("") : v.get<double>();
  };
  MetricRecord r;
  r.step = j.at("step").get<std::uint64_t>();
  r.ce_loss = num("ce_loss");
  r.reg_loss = num("reg_loss");
  r.total_loss = num("total_loss");
  r.eval_ce = num("eval_ce");
  for (const auto& v : j.at("layer_entropy")) r.layer_entropy.push_back(v.is_null() ? std::nan("") : v.get<double>());
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& v = j.at("bucket_fractions").at(k);
    r.bucket_fractions[k] = v.is_null() ? std::nan("") : v.get<double>();
  }
  if (j.contains("temperature") && !j["temperature"].is_null()) {
    const auto& t = j["temperature"];
    r.temperature = TemperatureStats{t.at("min").get<double>(), t.at("mean").get<double>(), t.at("max").get<double>()};
  }
  r.wall_seconds = num("wall_seconds");
  r.diverged = j.at("diverged").get<bool>();
  return r;
}

namespace {
bool same_bits(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }
}  // namespace

bool MetricRecord::same_values(const MetricRecord& o) const {
  if (step != o.step || diverged != o.diverged || layer_entropy.size() != o.layer_entropy.size()) return false;
  if (!same_bits(ce_loss, o.ce_loss) || !same_bits(reg_loss, o.reg_loss) || !same_bits(total_loss, o.total_loss) ||
      !same_bits(eval_ce, o.eval_ce))
    return false;
  for (std::size_t i = 0; i < layer_entropy.size(); ++i)
    if (!same_bits(layer_entropy[i], o.layer_entropy[i])) return false;
  for (std::size_t k = 0; k < 3; ++k)
    if (!same_bits(bucket_fractions[k], o.bucket_fractions[k])) return false;
  if (temperature.has_value() != o.temperature.has_value()) return false;
  if (temperature)
    return same_bits(temperature->min, o.temperature->min) && same_bits(temperature->mean, o.temperature->mean) &&
           same_bits(temperature->max, o.temperature->max);
  return true;
}

// ---- evaluation ----

EvalResult evaluate(const Model& model, std::span<const int> held_out, std::size_t context, std::size_t max_windows) {
  if (context == 0 || held_out.size() < context + 1)
    throw UsageError("held-out stream has " + std::to_string(held_out.size()) +
                     " tokens; evaluation needs at least T + 1 = " + std::to_string(context + 1));
  const std::size_t windows = std::min(max_windows, (held_out.size() - 1) / context);
  Model snapshot = model;
  snapshot.refine_spectral_estimates(30);

  constexpr std::size_t kChunk = 8;
  EvalResult res;
  res.windows = windows;
  double ce_sum = 0.0;
  for (std::size_t w0 = 0; w0 < windows; w0 += kChunk) {
    const std::size_t nw = std::min(kChunk, windows - w0);
    std::vector<std::vector<int>> inputs;
    std::vector<int> targets;
    for (std::size_t w = w0; w < w0 + nw; ++w) {
      const auto* s = held_out.data() + w * context;
      inputs.emplace_back(s, s + context);
      targets.insert(targets.end(), s + 1, s + context + 1);
    }
    Graph g(false);
    ModelOutput out = snapshot.forward(g, inputs, Phase::inference);
    ce_sum += cross_entropy(out.logits, targets).value().item() * static_cast<double>(nw);
    if (w0 + nw == windows && out.layers == 0) {
      res.entropy.context = out.seq_len;
    } else if (w0 + nw == windows) {
      ForwardTrace last;
      last.batch = 1;
      last.layers = out.layers;
      last.heads = out.heads;
      last.seq_len = out.seq_len;
      for (std::size_t l = 0; l < out.layers; ++l)
        for (std::size_t h = 0; h < out.heads; ++h) last.attention.push_back(out.attn(nw - 1, l, h).value());
      res.entropy = model_entropy(last);
    }
  }
  res.eval_ce = ce_sum / static_cast<double>(windows);
  res.perplexity = std::exp(res.eval_ce);
  return res;
}

// ---- trainer ----

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 rng_from_string(const std::string& s) {
  std::istringstream is(s);
  std::mt19937_64 rng;
  is >> rng;
  if (!is) throw CheckpointError("malformed RNG state");
  return rng;
}

namespace {

ArchConfig with_vocab(ArchConfig a, const Tokenizer& tok) {
  a.vocab_size = tok.vocab_size();
  return a;
}

// Model weights and the data order use independent streams of the seed.
std::uint64_t model_seed(std::uint64_t seed) { return seed * 0x9E3779B97F4A7C15ULL + 1; }

}  // namespace

Trainer::Trainer(TrainConfig cfg, TokenStream data)
    : cfg_([&] {
        cfg.arch = with_vocab(cfg.arch, data.tokenizer);
        cfg.validate();
        return cfg;
      }()),
      tokenizer_(data.tokenizer),
      model_(cfg_.arch, model_seed(cfg_.seed)),
      thresholds_(make_thresholds(cfg_.arch.layers, cfg_.arch.heads, cfg_.reg.threshold_init)),
      rng_(cfg_.seed) {
  const std::size_t n = data.tokens.size();
  const auto hold = static_cast<std::size_t>(std::floor(static_cast<double>(n) * cfg_.holdout_fraction));
  if (hold == 0) {
    train_ = std::move(data.tokens);
    held_out_ = train_;
  } else {
    train_.assign(data.tokens.begin(), data.tokens.end() - static_cast<std::ptrdiff_t>(hold));
    held_out_.assign(data.tokens.end() - static_cast<std::ptrdiff_t>(hold), data.tokens.end());
  }
  if (train_.size() < cfg_.arch.context + 1)
    throw UsageError("training split has " + std::to_string(train_.size()) + " tokens; need at least T + 1 = " +
                     std::to_string(cfg_.arch.context + 1));
  for (Parameter* p : trainable()) {
    adam_m_.emplace_back(p->value.shape(), 0.0);
    adam_v_.emplace_back(p->value.shape(), 0.0);
  }
}

std::vector<Parameter*> Trainer::trainable() {
  auto ps = model_.parameters();
  ps.push_back(&thresholds_);
  return ps;
}

namespace {

struct LossVars {
  Var ce, reg, total;
};

LossVars build_losses(Graph& g, Model& model, Parameter& thresholds, const TrainConfig& cfg, const Batch& batch) {
  ModelOutput out = model.forward(g, batch.inputs, Phase::train);
  std::vector<int> targets;
  for (const auto& t : batch.targets) targets.insert(targets.end(), t.begin(), t.end());
  LossVars lv{cross_entropy(out.logits, targets), Var{}, Var{}};
  lv.reg = reg_loss(out, g.param(thresholds), cfg.reg, cfg.arch.context);
  // With lambda = 0 the penalty stays out of the differentiated graph.
  lv.total = cfg.reg.lambda > 0 ? total_loss(lv.ce, lv.reg, cfg.reg.lambda) : lv.ce;
  return lv;
}

}  // namespace

StepLosses Trainer::train_step() {
  if (diverged_) throw UsageError("training already diverged");
  const Batch batch = next_batch(train_, cfg_.arch.context, cfg_.batch_size, rng_);
  return train_step(batch);
}

StepLosses Trainer::train_step(const Batch& batch) {
  auto params = trainable();
  for (Parameter* p : params) p->zero_grad();
  Graph g;
  LossVars lv = build_losses(g, model_, thresholds_, cfg_, batch);
  StepLosses s;
  s.ce = lv.ce.value().item();
  s.reg = lv.reg.value().item();
  s.total = lv.total.value().item();
  if (!std::isfinite(s.total)) {
    s.diverged = true;
  } else {
    g.backward(lv.total);
    double sq = 0.0;
    for (Parameter* p : params)
      for (double v : p->grad.storage()) sq += v * v;
    s.grad_norm = std::sqrt(sq);
    s.diverged = !std::isfinite(s.grad_norm);
  }
  if (s.diverged) {
    diverged_ = true;
    return s;
  }
  const double clip = cfg_.optimizer.grad_clip_norm;
  if (s.grad_norm > clip) {
    const double f = clip / s.grad_norm;
    for (Parameter* p : params)
      for (double& v : p->grad.storage()) v *= f;
    last_clipped_norm_ = 0.0;
    for (Parameter* p : params)
      for (double v : p->grad.storage()) last_clipped_norm_ += v * v;
    last_clipped_norm_ = std::sqrt(last_clipped_norm_);
  } else {
    last_clipped_norm_ = s.grad_norm;
  }
  ++step_;
  apply_update(learning_rate_at(cfg_, step_));
  return s;
}

void Trainer::apply_update(double lr) {
  const auto& o = cfg_.optimizer;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(o.beta1, t);
  const double bc2 = 1.0 - std::pow(o.beta2, t);
  auto params = trainable();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i]->value.storage();
    const auto& g = params[i]->grad.storage();
    auto& m = adam_m_[i].storage();
    auto& v = adam_v_[i].storage();
    const double decay = params[i]->decay ? o.weight_decay : 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = o.beta1 * m[k] + (1.0 - o.beta1) * g[k];
      v[k] = o.beta2 * v[k] + (1.0 - o.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= lr * (mhat / (std::sqrt(vhat) + o.eps_adam) + decay * w[k]);
    }
  }
}

StepLosses Trainer::probe_losses() const {
  std::mt19937_64 rng = rng_;
  const Batch batch = next_batch(train_, cfg_.arch.context, cfg_.batch_size, rng);
  Model model = model_;
  Parameter thr = thresholds_;
  Graph g(false);
  LossVars lv = build_losses(g, model, thr, cfg_, batch);
  StepLosses s;
  s.ce = lv.ce.value().item();
  s.reg = lv.reg.value().item();
  s.total = lv.total.value().item();
  s.diverged = !std::isfinite(s.total);
  return s;
}

EvalResult Trainer::evaluate() const { return entlab::evaluate(model_, held_out_, cfg_.arch.context, cfg_.eval_windows); }

MetricRecord Trainer::record(const StepLosses& losses, double wall_seconds) const {
  MetricRecord r;
  r.step = step_;
  r.ce_loss = losses.ce;
  r.reg_loss = losses.reg;
  r.total_loss = losses.total;
  r.wall_seconds = wall_seconds;
  r.diverged = losses.diverged;
  if (losses.diverged) {
    r.eval_ce = std::nan("");
    r.layer_entropy.assign(cfg_.arch.layers, std::nan(""));
    r.bucket_fractions.fill(std::nan(""));
  } else {
    const EvalResult ev = evaluate();
    r.eval_ce = ev.eval_ce;
    for (std::size_t l = 0; l < ev.entropy.layers; ++l) r.layer_entropy.push_back(ev.entropy.layer_mean(l));
    if (!ev.entropy.values.empty()) r.bucket_fractions = bucket_fractions(ev.entropy).fractions;
  }
  if (cfg_.arch.learnable_temperature) {
    TemperatureStats ts{INFINITY, 0.0, -INFINITY};
    std::size_t n = 0;
    for (std::size_t l = 0; l < cfg_.arch.layers; ++l) {
      const Tensor temps = model_.temperatures(l);
      for (double t : temps.storage()) {
        ts.min = std::min(ts.min, t);
        ts.max = std::max(ts.max, t);
        ts.mean += t;
        ++n;
      }
    }
    // Summation rounding can push the mean of equal values past them.
    ts.mean = std::clamp(ts.mean / static_cast<double>(n), ts.min, ts.max);
    r.temperature = ts;
  }
  return r;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c = model_checkpoint(model_, step_);
  c.rng_state = rng_to_string(rng_);
  c.tokenizer = tokenizer_.to_json();
  c.tensors.push_back({thresholds_.name, thresholds_.value});
  auto params = model_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.tensors.push_back({"adam.m." + params[i]->name, adam_m_[i]});
    c.tensors.push_back({"adam.v." + params[i]->name, adam_v_[i]});
  }
  c.tensors.push_back({"adam.m." + thresholds_.name, adam_m_.back()});
  c.tensors.push_back({"adam.v." + thresholds_.name, adam_v_.back()});
  c.extra = {{"train_config", cfg_.to_json()}, {"diverged", diverged_}, {"wall_seconds", wall_offset_}};
  return c;
}

void Trainer::save(const fs::path& dir) const { save_checkpoint(checkpoint(), dir); }

Trainer Trainer::resume(TrainConfig cfg, TokenStream data, const Checkpoint& ckpt) {
  if (!ckpt.tokenizer.is_null() && !ckpt.tokenizer.empty() && !(Tokenizer::from_json(ckpt.tokenizer) == data.tokenizer))
    throw CheckpointError("checkpoint tokenizer does not match the corpus tokenizer");
  Trainer t(std::move(cfg), std::move(data));
  static const std::vector<std::string> extra = {"reg.", "adam."};
  restore_model(t.model_, ckpt, extra);
  auto copy = [&](const std::string& name, Tensor& dst) {
    const Tensor* src = ckpt.find(name);
    if (!src) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    if (src->shape() != dst.shape()) throw CheckpointError("tensor '" + name + "' has shape " + shape_str(src->shape()));
    dst = *src;
  };
  copy(t.thresholds_.name, t.thresholds_.value);
  auto params = t.trainable();
  for (std::size_t i = 0; i < params.size(); ++i) {
    copy("adam.m." + params[i]->name, t.adam_m_[i]);
    copy("adam.v." + params[i]->name, t.adam_v_[i]);
  }
  t.step_ = ckpt.step;
  t.rng_ = rng_from_string(ckpt.rng_state);
  if (ckpt.extra.is_object()) {
    if (ckpt.extra.contains("diverged")) t.diverged_ = ckpt.extra["diverged"].get<bool>();
    if (ckpt.extra.contains("wall_seconds")) t.wall_offset_ = ckpt.extra["wall_seconds"].get<double>();
  }
  return t;
}

RunSummary Trainer::run(const std::function<void(const MetricRecord&)>& on_record, bool write_outputs) {
  const fs::path out_dir = cfg_.out_dir;
  const auto t0 = std::chrono::steady_clock::now();
  const double wall_base = wall_offset_;
  auto wall = [&] {
    return wall_base + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  if (write_outputs) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + out_dir.string() + "': " + ec.message());
    write_file_atomic(out_dir / "config.json", cfg_.to_json().dump(2) + "\n");
    if (tokenizer_.kind() == TokenizerKind::char_)
      write_file_atomic(out_dir / "vocab.json", tokenizer_.to_json().dump() + "\n");
    if (step_ > 0 && fs::exists(out_dir / "metrics.jsonl")) {
      // Keep the records of the run being resumed up to its checkpoint.
      std::istringstream lines(read_file(out_dir / "metrics.jsonl"));
      std::string line;
      history_.clear();
      while (std::getline(lines, line)) {
        if (line.empty()) continue;
        MetricRecord r = MetricRecord::from_json(nlohmann::json::parse(line));
        if (r.step <= step_) history_.push_back(r);
      }
    }
  }
  RunSummary summary;
  auto emit = [&](const MetricRecord& r) {
    history_.push_back(r);
    summary.records.push_back(r);
    if (on_record) on_record(r);
    if (write_outputs) {
      std::string text;
      for (const auto& h : history_) text += h.to_json().dump() + "\n";
      write_file_atomic(out_dir / "metrics.jsonl", text);
    }
  };
  auto save_final = [&] {
    wall_offset_ = wall();
    if (write_outputs) save(out_dir / "final");
  };

  if (step_ == 0 && !diverged_) emit(record(probe_losses(), wall()));
  const std::size_t total = cfg_.schedule.total_steps;
  while (step_ < total && !diverged_) {
    const StepLosses s = train_step();
    if (s.diverged) {
      MetricRecord r = record(s, wall());
      r.step = step_ + 1;
      emit(r);
      break;
    }
    if (step_ % cfg_.eval_interval == 0 || step_ == total) emit(record(s, wall()));
    if (write_outputs && cfg_.checkpoint_interval && step_ % cfg_.checkpoint_interval == 0 && step_ < total) {
      wall_offset_ = wall();
      save(out_dir / ("step-" + std::to_string(step_)));
    }
  }
  save_final();
  summary.diverged = diverged_;
  summary.steps = step_;
  return summary;
}

}  // namespace entlab
