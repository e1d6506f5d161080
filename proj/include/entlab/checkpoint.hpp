#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "entlab/model.hpp"

namespace entlab {

inline constexpr int kCheckpointFormatVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// A checkpoint directory holds manifest.json and tensors.bin, the latter
/// being little-endian float64 data concatenated in manifest order.
struct Checkpoint {
  ArchConfig arch;
  std::uint64_t step = 0;
  std::string rng_state;
  nlohmann::json tokenizer = nlohmann::json::object();
  /// Free-form metadata (training config, optimizer step, ...).
  nlohmann::json extra = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Tensor* find(std::string_view name) const;
};

/// Writes both files atomically, manifest last.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
/// Throws CheckpointError on version mismatch, malformed manifest, bad
/// offsets, truncated blob or duplicate names.
Checkpoint read_checkpoint(const std::filesystem::path& dir);

/// Parameters and buffers of a model, in declaration order.
Checkpoint model_checkpoint(const Model& model, std::uint64_t step);

/// Copies every parameter and buffer of `model` from the checkpoint. Throws
/// CheckpointError when the architectures differ (naming both), a tensor is
/// missing or has the wrong shape, or the checkpoint holds a tensor that is
/// neither a model tensor nor under one of `extra_prefixes`.
void restore_model(Model& model, const Checkpoint& ckpt, std::span<const std::string> extra_prefixes = {});

/// Model rebuilt from the checkpoint's architecture echo. Tensors under the
/// trainer's "reg." and "adam." prefixes are ignored.
Model load_model(const Checkpoint& ckpt);
Model load_model(const std::filesystem::path& dir);

}  // namespace entlab
