#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "entlab/model.hpp"
#include "entlab/regularizer.hpp"

namespace entlab {

/// Reads fields of one JSON object, collecting every problem instead of
/// stopping at the first.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& obj, std::string prefix, std::vector<std::string>& errors);

  bool has(const std::string& key) const;
  void read(const std::string& key, bool& out);
  void read(const std::string& key, double& out);
  void read(const std::string& key, std::size_t& out);
  void read(const std::string& key, std::string& out);
  /// Marks a key as known without reading it.
  void accept(const std::string& key) { known_.insert(key); }
  const nlohmann::json* object(const std::string& key);
  void fail(const std::string& key, const std::string& why);
  /// Reports keys that were never read or accepted.
  void reject_unknown();
  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

 private:
  const nlohmann::json& obj_;
  std::string prefix_;
  std::vector<std::string>& errors_;
  std::set<std::string> known_;
};

/// Field names: preset (optional base), ffn_kind, use_layernorm,
/// learnable_temperature, norm_alternative, norm_target_set, L, H, d, T,
/// vocab_size, temperature_init.
nlohmann::json arch_to_json(const ArchConfig& a);
ArchConfig arch_from_json(const nlohmann::json& j, const std::string& prefix, std::vector<std::string>& errors);
/// Throws ConfigError listing every offending field.
ArchConfig arch_from_json(const nlohmann::json& j);

/// Field names: lambda, gamma, threshold_init, per_position.
nlohmann::json reg_to_json(const RegConfig& r);
RegConfig reg_from_json(const nlohmann::json& j, const std::string& prefix, std::vector<std::string>& errors);

/// Throws ConfigError("<what>: a; b; c") when errors is non-empty.
void throw_if_errors(const std::string& what, const std::vector<std::string>& errors);

}  // namespace entlab
