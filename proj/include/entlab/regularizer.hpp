#pragma once

#include "entlab/model.hpp"

namespace entlab {

struct RegConfig {
  /// Weight of the entropy penalty in the total loss.
  double lambda = 1e-5;
  /// Tolerance margin as a fraction of E_max = log T.
  double gamma = 0.2;
  /// Initial value of every learnable threshold fraction.
  double threshold_init = 0.5;
  /// Penalize per-query-position entropies and sum them over positions and
  /// batch, instead of thresholding the query-averaged head entropy.
  bool per_position = false;

  void validate() const;
};

/// L x H grid of learnable threshold fractions, initialized to threshold_init.
Parameter make_thresholds(std::size_t layers, std::size_t heads, double threshold_init);

/// Penalty from a grid of head entropies [L x H]: with E_max = log T and
/// Tol = gamma E_max, each head contributes delta^2 when |delta| > Tol where
/// delta = E - theta E_max; averaged over heads, then over layers.
Var reg_loss_from_entropies(Var entropies, Var thresholds, const RegConfig& cfg, std::size_t context);

/// Entropy penalty of a forward pass. Head entropies are query-averaged and
/// then averaged over the batch (or per position, see RegConfig).
Var reg_loss(const ModelOutput& out, Var thresholds, const RegConfig& cfg, std::size_t context);

/// ce + lambda * reg
Var total_loss(Var ce, Var reg, double lambda);

/// d penalty / d delta as used by the backward pass: 2 delta 1(|delta| > tol).
double dead_zone_gradient(double delta, double tol);

}  // namespace entlab
