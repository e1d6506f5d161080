#include "entlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <set>

#include "entlab/config_json.hpp"
#include "entlab/errors.hpp"
#include "entlab/io_util.hpp"

namespace entlab {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kBlob = "tensors.bin";

void put_le(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
}

double get_le(const char* p) {
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[k])) << (8 * k);
  return std::bit_cast<double>(bits);
}

}  // namespace

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.value;
  return nullptr;
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory '" + dir.string() + "': " + ec.message());

  std::string blob;
  nlohmann::json index = nlohmann::json::array();
  std::set<std::string> seen;
  for (const auto& t : ckpt.tensors) {
    if (!seen.insert(t.name).second) throw UsageError("duplicate tensor '" + t.name + "' in checkpoint");
    index.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"offset", blob.size()}});
    for (double v : t.value.storage()) put_le(blob, v);
  }
  nlohmann::json manifest = {{"format_version", kCheckpointFormatVersion},
                             {"arch", arch_to_json(ckpt.arch)},
                             {"step", ckpt.step},
                             {"rng_state", ckpt.rng_state},
                             {"tokenizer", ckpt.tokenizer},
                             {"extra", ckpt.extra},
                             {"blob", kBlob},
                             {"blob_bytes", blob.size()},
                             {"tensors", index}};
  write_file_atomic(dir / kBlob, blob);
  write_file_atomic(dir / kManifest, manifest.dump(1) + "\n");
}

Checkpoint read_checkpoint(const fs::path& dir) {
  const fs::path mpath = dir / kManifest;
  if (!fs::exists(mpath)) throw CheckpointError("no " + std::string(kManifest) + " in '" + dir.string() + "'");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file(mpath));
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError("malformed manifest '" + mpath.string() + "': " + e.what());
  }
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!m.is_object() || !m.contains(key)) throw CheckpointError(std::string("manifest lacks '") + key + "'");
    return m[key];
  };
  const auto& ver = need("format_version");
  if (!ver.is_number_integer() || ver.get<int>() != kCheckpointFormatVersion)
    throw CheckpointError("checkpoint format version " + ver.dump() + " is not supported (expected " +
                          std::to_string(kCheckpointFormatVersion) + ")");

  Checkpoint ckpt;
  try {
    ckpt.arch = arch_from_json(need("arch"));
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("manifest architecture: ") + e.what());
  }
  const auto& step = need("step");
  if (!step.is_number_unsigned()) throw CheckpointError("manifest 'step' must be a non-negative integer");
  ckpt.step = step.get<std::uint64_t>();
  const auto& rng = need("rng_state");
  if (!rng.is_string()) throw CheckpointError("manifest 'rng_state' must be a string");
  ckpt.rng_state = rng.get<std::string>();
  if (m.contains("tokenizer")) ckpt.tokenizer = m["tokenizer"];
  if (m.contains("extra")) ckpt.extra = m["extra"];

  const std::string blob = read_file(dir / kBlob);
  const auto& index = need("tensors");
  if (!index.is_array()) throw CheckpointError("manifest 'tensors' must be an array");
  std::set<std::string> seen;
  std::size_t expected_offset = 0;
  for (const auto& e : index) {
    if (!e.is_object() || !e.contains("name") || !e["name"].is_string() || !e.contains("shape") ||
        !e["shape"].is_array() || !e.contains("offset") || !e["offset"].is_number_unsigned())
      throw CheckpointError("malformed tensor entry " + e.dump());
    NamedTensor t;
    t.name = e["name"].get<std::string>();
    if (!seen.insert(t.name).second) throw CheckpointError("tensor '" + t.name + "' appears twice");
    Shape shape;
    for (const auto& d : e["shape"]) {
      if (!d.is_number_unsigned()) throw CheckpointError("tensor '" + t.name + "' has a malformed shape");
      shape.push_back(d.get<std::size_t>());
    }
    const std::size_t offset = e["offset"].get<std::size_t>();
    if (offset != expected_offset)
      throw CheckpointError("tensor '" + t.name + "' has offset " + std::to_string(offset) + ", expected " +
                            std::to_string(expected_offset));
    const std::size_t n = shape_numel(shape);
    if (offset + 8 * n > blob.size())
      throw CheckpointError("tensor blob is truncated: '" + t.name + "' needs bytes up to " +
                            std::to_string(offset + 8 * n) + ", blob has " + std::to_string(blob.size()));
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = get_le(blob.data() + offset + 8 * i);
    t.value = Tensor(shape, std::move(data));
    expected_offset = offset + 8 * n;
    ckpt.tensors.push_back(std::move(t));
  }
  if (expected_offset != blob.size())
    throw CheckpointError("tensor blob has " + std::to_string(blob.size()) + " bytes, manifest describes " +
                          std::to_string(expected_offset));
  return ckpt;
}

Checkpoint model_checkpoint(const Model& model, std::uint64_t step) {
  Checkpoint c;
  c.arch = model.config();
  c.step = step;
  for (const Parameter* p : model.parameters()) c.tensors.push_back({p->name, p->value});
  for (const Buffer& b : model.buffers()) c.tensors.push_back({b.name, b.value});
  return c;
}

void restore_model(Model& model, const Checkpoint& ckpt, std::span<const std::string> extra_prefixes) {
  if (!(ckpt.arch == model.config()))
    throw CheckpointError("architecture mismatch: checkpoint has [" + ckpt.arch.describe() + "], model expects [" +
                          model.config().describe() + "]");
  std::set<std::string> wanted;
  auto copy_into = [&](const std::string& name, Tensor& dst) {
    wanted.insert(name);
    const Tensor* src = ckpt.find(name);
    if (!src) throw CheckpointError("checkpoint lacks tensor '" + name + "'");
    if (src->shape() != dst.shape())
      throw CheckpointError("tensor '" + name + "' has shape " + shape_str(src->shape()) + ", model expects " +
                            shape_str(dst.shape()));
    dst = *src;
  };
  for (Parameter* p : model.parameters()) copy_into(p->name, p->value);
  for (Buffer& b : model.buffers()) copy_into(b.name, b.value);
  for (const auto& t : ckpt.tensors) {
    if (wanted.count(t.name)) continue;
    bool extra = false;
    for (const auto& prefix : extra_prefixes) extra = extra || t.name.rfind(prefix, 0) == 0;
    if (!extra) throw CheckpointError("unknown tensor '" + t.name + "' in checkpoint");
  }
}

Model load_model(const Checkpoint& ckpt) {
  Model model(ckpt.arch, 0);
  static const std::vector<std::string> trainer_prefixes = {"reg.", "adam."};
  restore_model(model, ckpt, trainer_prefixes);
  return model;
}

Model load_model(const fs::path& dir) { return load_model(read_checkpoint(dir)); }

}  // namespace entlab
