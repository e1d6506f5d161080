#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "entlab/model.hpp"

namespace entlab {

/// Additive guard inside the logarithm of attention entropies.
inline constexpr double kEntropyEps = 1e-9;

/// Mean attention entropy per (layer, head), in nats.
struct EntropyMatrix {
  std::size_t layers = 0;
  std::size_t heads = 0;
  /// Context length the entropies were measured at.
  std::size_t context = 0;
  /// Row-major layers x heads.
  std::vector<double> values;

  double at(std::size_t l, std::size_t h) const { return values[l * heads + h]; }
  double& at(std::size_t l, std::size_t h) { return values[l * heads + h]; }
  /// log T, the entropy of a uniform distribution over T keys.
  double max_theoretical() const;
  double max_observed() const;
  double min_observed() const;
  double layer_mean(std::size_t l) const;
};

/// Fractions of heads in [0, max/4), [max/4, 3max/4), [3max/4, max] where max
/// is the largest observed entropy.
struct BucketSummary {
  std::array<double, 3> fractions{};
  double reference_max = 0.0;
};

struct HeadFlags {
  std::vector<std::pair<std::size_t, std::size_t>> heads;  // (layer, head)
  std::vector<std::size_t> per_layer;
};

/// Mean over query rows of -sum_j a_ij log(a_ij + eps); exact zeros skipped.
double head_entropy(const Tensor& probs, double eps = kEntropyEps);

/// Per-head entropies of a trace, averaged over its batch elements.
EntropyMatrix model_entropy(const ForwardTrace& trace);
/// Averages over several traces of the same model shape.
EntropyMatrix model_entropy(std::span<const ForwardTrace> traces);

BucketSummary bucket_fractions(const EntropyMatrix& em);

/// Heads with entropy below fraction * log T.
HeadFlags detect_collapse(const EntropyMatrix& em, double fraction_threshold = 0.05);
/// Heads with entropy above fraction * max observed entropy.
HeadFlags detect_overload(const EntropyMatrix& em, double fraction_threshold = 0.75);

enum class HeatmapFormat { csv, svg };

std::string entropy_csv(const EntropyMatrix& em);
std::string entropy_svg(const EntropyMatrix& em);
void export_heatmap(const EntropyMatrix& em, const std::filesystem::path& path, HeatmapFormat format);

/// Parses the "layer,head,entropy" CSV. `context` supplies T, which the CSV
/// does not carry.
EntropyMatrix parse_entropy_csv(const std::string& text, std::size_t context);
EntropyMatrix read_entropy_csv(const std::filesystem::path& path, std::size_t context);

}  // namespace entlab
