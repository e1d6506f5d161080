#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "entlab/model.hpp"

namespace entlab {

enum class NonlinearKind { softmax, layernorm, gelu, relu };
std::string to_string(NonlinearKind k);

struct OpEntry {
  NonlinearKind kind;
  std::uint64_t count;
  std::uint64_t rows, cols;
  std::uint64_t elements() const { return count * rows * cols; }
};

/// Nonlinear operators evaluated in one forward pass over a full context.
struct OpInventory {
  std::vector<OpEntry> entries;

  std::uint64_t elements(NonlinearKind kind) const;
  std::uint64_t count(NonlinearKind kind) const;
  /// e.g. "SM:144x[128x128] LN:24x[128x768] G:12x[128x3072]"
  std::string describe() const;
};

/// Softmax: L*H of [T x T]; LayerNorm (when used): 2L of [T x d];
/// GELU/ReLU (when used): L of [T x 4d]. The final LayerNorm before the
/// unembedding is not counted.
OpInventory count_nonlinear_ops(const ArchConfig& arch);

struct FlopCount {
  std::uint64_t ffn = 0;
  std::uint64_t attn = 0;
  std::uint64_t total() const { return ffn + attn; }
};

/// Multiply-accumulate counted as two FLOPs; embeddings excluded.
/// ffn: 16 T d^2 L for two-layer FFNs, 2 T d^2 L + 2 T d L (alpha/beta
/// scalings) for scaled_fused. attn: (8 T d^2 + 3 T^2 d) L.
FlopCount flops(const ArchConfig& arch);

/// Terms of the linear cost model.
enum class CostTerm { softmax, layernorm, gelu, relu, linear_flop, fixed };
inline constexpr std::size_t kCostTerms = 6;
std::string to_string(CostTerm t);

/// Unit costs: per element of each nonlinear operator, per FLOP of the linear
/// layers, plus a fixed overhead (element count 1).
struct CostModel {
  std::array<double, kCostTerms> bytes{};
  std::array<double, kCostTerms> seconds{};

  nlohmann::json to_json() const;
  /// Throws ConfigError on missing or negative entries.
  static CostModel from_json(const nlohmann::json& j);
  static CostModel load(const std::string& path);
  /// Fitted to the published GPT-2 rows (see published_observations()).
  static CostModel calibrated_default();
};

struct CostReport {
  ArchConfig arch;
  OpInventory inventory;
  FlopCount flop_count;
  double est_comm_gb = 0.0;
  double est_latency_min = 0.0;
  std::string baseline = "sm_ln_g";
  /// nullopt when undefined (zero cost on either side).
  std::optional<double> comm_savings;
  std::optional<double> latency_savings;

  nlohmann::json to_json() const;
};

/// Feature vector (element counts, FLOPs, 1) of an architecture.
std::array<double, kCostTerms> cost_features(const ArchConfig& arch);

CostReport estimate(const ArchConfig& arch, const CostModel& model);

struct Observation {
  std::string label;
  ArchConfig arch;
  double comm_gb = 0.0;
  double latency_min = 0.0;
};

/// Published comm/latency rows for GPT-2 (L in {12, 18}, H=12, d=768,
/// T in {128, 256, 512}); one row per distinct architecture.
std::vector<Observation> published_observations();
/// Only the T=128 and T=512 twelve-layer rows.
std::vector<Observation> published_observations_ctx128_512();

/// Which terms the fit may move. Fixed terms keep the seed's value.
struct CalibrationSeed {
  CostModel initial;
  std::array<bool, kCostTerms> free{};

  /// All terms free except layernorm, which is pinned to 0: in the published
  /// rows LayerNorm elements are always half the GELU/ReLU elements, so the
  /// two cannot be separated and the activation terms absorb LayerNorm.
  static CalibrationSeed standard();
};

struct Calibration {
  CostModel model;
  /// (predicted - observed) / observed per observation.
  std::vector<double> comm_residuals;
  std::vector<double> latency_residuals;

  double max_abs_comm_residual() const;
  double max_abs_latency_residual() const;
};

/// Non-negative least squares on relative residuals, separately for bytes
/// and seconds. Throws ConfigError listing free terms the observations
/// cannot determine.
Calibration calibrate(const CalibrationSeed& seed, std::span<const Observation> observations);

}  // namespace entlab
