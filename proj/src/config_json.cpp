#include "entlab/config_json.hpp"

#include <cmath>

#include "entlab/errors.hpp"

namespace entlab {

FieldReader::FieldReader(const nlohmann::json& obj, std::string prefix, std::vector<std::string>& errors)
    : obj_(obj), prefix_(std::move(prefix)), errors_(errors) {}

bool FieldReader::has(const std::string& key) const { return obj_.is_object() && obj_.contains(key); }

void FieldReader::fail(const std::string& key, const std::string& why) { errors_.push_back(path(key) + ": " + why); }

void FieldReader::read(const std::string& key, bool& out) {
  known_.insert(key);
  if (!has(key)) return;
  if (!obj_[key].is_boolean()) return fail(key, "expected a boolean");
  out = obj_[key].get<bool>();
}

void FieldReader::read(const std::string& key, double& out) {
  known_.insert(key);
  if (!has(key)) return;
  if (!obj_[key].is_number()) return fail(key, "expected a number");
  const double v = obj_[key].get<double>();
  if (!std::isfinite(v)) return fail(key, "must be finite");
  out = v;
}

void FieldReader::read(const std::string& key, std::size_t& out) {
  known_.insert(key);
  if (!has(key)) return;
  const auto& v = obj_[key];
  if (v.is_number_unsigned()) {
    out = v.get<std::size_t>();
  } else if (v.is_number_integer()) {
    fail(key, "must be non-negative");
  } else {
    fail(key, "expected an integer");
  }
}

void FieldReader::read(const std::string& key, std::string& out) {
  known_.insert(key);
  if (!has(key)) return;
  if (!obj_[key].is_string()) return fail(key, "expected a string");
  out = obj_[key].get<std::string>();
}

const nlohmann::json* FieldReader::object(const std::string& key) {
  known_.insert(key);
  if (!has(key)) return nullptr;
  if (!obj_[key].is_object()) {
    fail(key, "expected an object");
    return nullptr;
  }
  return &obj_[key];
}

void FieldReader::reject_unknown() {
  if (!obj_.is_object()) return;
  for (const auto& [key, value] : obj_.items())
    if (!known_.count(key)) errors_.push_back(path(key) + ": unknown field");
}

void throw_if_errors(const std::string& what, const std::vector<std::string>& errors) {
  if (errors.empty()) return;
  std::string msg = what + ":";
  for (std::size_t i = 0; i < errors.size(); ++i) msg += (i ? "; " : " ") + errors[i];
  throw ConfigError(msg);
}

nlohmann::json arch_to_json(const ArchConfig& a) {
  return {{"ffn_kind", to_string(a.ffn_kind)},
          {"use_layernorm", a.use_layernorm},
          {"learnable_temperature", a.learnable_temperature},
          {"norm_alternative", to_string(a.norm_alternative)},
          {"norm_target_set", to_string(a.norm_targets)},
          {"L", a.layers},
          {"H", a.heads},
          {"d", a.d_model},
          {"T", a.context},
          {"vocab_size", a.vocab_size},
          {"temperature_init", a.temperature_init}};
}

ArchConfig arch_from_json(const nlohmann::json& j, const std::string& prefix, std::vector<std::string>& errors) {
  ArchConfig a;
  if (!j.is_object()) {
    errors.push_back(prefix + ": expected an object");
    return a;
  }
  FieldReader r(j, prefix, errors);
  std::string preset, ffn_kind, norm_alt, norm_targets;
  r.read("preset", preset);
  if (!preset.empty()) {
    try {
      a = ArchConfig::preset(preset);
    } catch (const ConfigError& e) {
      r.fail("preset", e.what());
    }
  }
  r.read("ffn_kind", ffn_kind);
  r.read("norm_alternative", norm_alt);
  r.read("norm_target_set", norm_targets);
  auto parse = [&](const std::string& key, const std::string& text, auto parser, auto& out) {
    if (text.empty()) return;
    try {
      out = parser(text);
    } catch (const ConfigError& e) {
      r.fail(key, e.what());
    }
  };
  parse("ffn_kind", ffn_kind, parse_ffn_kind, a.ffn_kind);
  parse("norm_alternative", norm_alt, parse_norm_alternative, a.norm_alternative);
  parse("norm_target_set", norm_targets, parse_norm_targets, a.norm_targets);
  r.read("use_layernorm", a.use_layernorm);
  r.read("learnable_temperature", a.learnable_temperature);
  r.read("L", a.layers);
  r.read("H", a.heads);
  r.read("d", a.d_model);
  r.read("T", a.context);
  r.read("vocab_size", a.vocab_size);
  r.read("temperature_init", a.temperature_init);
  r.reject_unknown();
  if (a.layers == 0) r.fail("L", "must be positive");
  if (a.heads == 0) r.fail("H", "must be positive");
  if (a.d_model == 0) r.fail("d", "must be positive");
  if (a.heads && a.d_model % a.heads) r.fail("d", "must be divisible by H");
  if (a.context == 0) r.fail("T", "must be positive");
  if (a.vocab_size == 0) r.fail("vocab_size", "must be positive");
  if (a.norm_alternative != NormAlternative::none && a.use_layernorm)
    r.fail("norm_alternative", "requires use_layernorm = false");
  if (a.learnable_temperature && !(a.temperature_init > kMinTemperature))
    r.fail("temperature_init", "must exceed " + std::to_string(kMinTemperature));
  return a;
}

ArchConfig arch_from_json(const nlohmann::json& j) {
  std::vector<std::string> errors;
  ArchConfig a = arch_from_json(j, "arch", errors);
  throw_if_errors("invalid architecture", errors);
  return a;
}

nlohmann::json reg_to_json(const RegConfig& c) {
  return {{"lambda", c.lambda}, {"gamma", c.gamma}, {"threshold_init", c.threshold_init}, {"per_position", c.per_position}};
}

RegConfig reg_from_json(const nlohmann::json& j, const std::string& prefix, std::vector<std::string>& errors) {
  RegConfig c;
  FieldReader r(j, prefix, errors);
  r.read("lambda", c.lambda);
  r.read("gamma", c.gamma);
  r.read("threshold_init", c.threshold_init);
  r.read("per_position", c.per_position);
  r.reject_unknown();
  if (c.lambda < 0) r.fail("lambda", "must be >= 0");
  if (!(c.gamma >= 0 && c.gamma < 1)) r.fail("gamma", "must lie in [0, 1)");
  if (!(c.threshold_init > 0 && c.threshold_init < 1)) r.fail("threshold_init", "must lie in (0, 1)");
  return c;
}

}  // namespace entlab
