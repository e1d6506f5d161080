#pragma once

#include <optional>
#include <span>
#include <vector>

#include "entlab/graph.hpp"

namespace entlab {

// Differentiable operators over Graph variables. Binary elementwise ops
// broadcast only scalar-vs-tensor and row-vector-vs-matrix.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);

/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Var gelu(Var a);
Var relu(Var a);
Var exp(Var a);
/// Throws DomainError on any non-positive element.
Var log(Var a);
Var square(Var a);
Var abs(Var a);
Var softplus(Var a);
/// 1/a with |a| clamped from below at min_abs (sign preserved). The clamped
/// region has zero gradient.
Var reciprocal(Var a, double min_abs = 1e-6);

Var sum(Var a);
Var mean(Var a);

inline constexpr double kLayerNormEps = 1e-5;

/// Row-wise normalization to zero mean / unit variance followed by gain and
/// bias (both length d). Requires d >= 2.
Var layernorm(Var x, Var gain, Var bias);

enum class Mask { none, causal };

/// softmax over each row i of (scale / t_i) * logits with the optional
/// causal mask (entry (i, j) kept iff i >= j). Without a temperature t_i = 1.
/// Masked outputs are exactly 0.
Var masked_temperature_softmax(Var logits, Mask mask, std::optional<Var> temperature, double scale);

/// Sub-block [r0, r0+nr) x [c0, c0+nc) of a rank-2 tensor.
Var slice(Var x, std::size_t r0, std::size_t nr, std::size_t c0, std::size_t nc);
/// Concatenates rank-2 tensors along axis 0 (rows) or 1 (columns).
Var concat(std::span<const Var> parts, int axis);

/// Rows of `table` selected by ids; ids must be in [0, rows).
Var gather_rows(Var table, std::span<const int> ids);

/// Mean negative log-likelihood of targets under row-wise softmax(logits).
Var cross_entropy(Var logits, std::span<const int> targets);

/// Shannon entropy (nats) of each row: -sum_j p log(p + eps). Entries that
/// are exactly zero contribute nothing. Output shape [rows].
Var row_entropy(Var probs, double eps = 1e-9);

/// delta^2 where |delta| > tol, else 0. The indicator is held constant in
/// the backward pass, so the gradient is 2 delta 1(|delta| > tol).
Var dead_zone_square(Var delta, double tol);

/// Weight normalization per output unit. v is [in x out]; column j of the
/// result is g_j v_j / ||v_j||.
Var weight_norm(Var v, Var g);

/// w / sigma with sigma = u^T w v for fixed singular-vector estimates u, v.
Var spectral_normalize(Var w, const Tensor& u, const Tensor& v);

/// Runs `iters` power-iteration steps updating u (len rows) and v (len cols)
/// in place, returns the estimate u^T w v.
double power_iteration(const Tensor& w, Tensor& u, Tensor& v, int iters);

}  // namespace entlab
