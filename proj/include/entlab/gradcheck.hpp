#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "entlab/graph.hpp"

namespace entlab::gradcheck {

/// |a - n| / max(1, |a|, |n|): relative for large gradients, absolute near 0.
double relative_error(double analytic, double numeric);

/// Builds a scalar loss from leaf variables bound to the given inputs.
using LossFn = std::function<Var(Graph&, std::span<const Var>)>;

/// Max relative error between backward() and central differences with step
/// h over every element of every input.
double max_error(const LossFn& f, const std::vector<Tensor>& inputs, double h = 1e-6);

struct CheckResult {
  std::string name;
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Names of the checks in the built-in suite.
std::vector<std::string> suite_names();

/// Runs `trials` randomized cases per check (all checks, or only `only`).
/// Throws UsageError on an unknown name.
std::vector<CheckResult> run_suite(std::optional<std::string> only = std::nullopt, int trials = 50,
                                   std::uint64_t seed = 1234, double tolerance = 1e-5);

}  // namespace entlab::gradcheck
