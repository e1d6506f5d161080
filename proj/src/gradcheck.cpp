#include "entlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "entlab/errors.hpp"
#include "entlab/model.hpp"
#include "entlab/ops.hpp"
#include "entlab/regularizer.hpp"

namespace entlab::gradcheck {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / denom;
}

namespace {
double eval(const LossFn& f, const std::vector<Tensor>& inputs) {
  Graph g(false);
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(g.constant(t));
  return f(g, vars).value().item();
}
}  // namespace

double max_error(const LossFn& f, const std::vector<Tensor>& inputs, double h) {
  std::vector<Parameter> params;
  params.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) params.emplace_back("x" + std::to_string(i), inputs[i]);
  {
    Graph g;
    std::vector<Var> vars;
    for (auto& p : params) vars.push_back(g.param(p));
    g.backward(f(g, vars));
  }
  double worst = 0.0;
  std::vector<Tensor> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double x0 = inputs[k][i];
      probe[k][i] = x0 + h;
      const double up = eval(f, probe);
      probe[k][i] = x0 - h;
      const double down = eval(f, probe);
      probe[k][i] = x0;
      worst = std::max(worst, relative_error(params[k].grad[i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

namespace {

using Rng = std::mt19937_64;

Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (double& v : t.data()) v = d(rng);
  return t;
}

// Values bounded away from a kink at `at` by at least `gap`.
Tensor away_from(Shape shape, double at, double gap, Rng& rng) {
  Tensor t = uniform(std::move(shape), -2.0, 2.0, rng);
  for (double& v : t.data()) {
    if (std::fabs(v - at) < gap) v = at + (v >= at ? gap : -gap);
  }
  return t;
}

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Weighted sum so every output element gets a distinct upstream gradient.
Var weighted(Var y, const Tensor& w) { return sum(mul(y, y.graph->constant(w))); }

struct Case {
  std::vector<Tensor> inputs;
  LossFn fn;
};

using Generator = std::function<Case(Rng&)>;

Case unary_case(Rng& rng, Var (*op)(Var), Tensor x) {
  Tensor w = uniform(x.shape(), -1.0, 1.0, rng);
  return {{std::move(x)}, [op, w](Graph&, std::span<const Var> v) { return weighted(op(v[0]), w); }};
}

std::map<std::string, Generator> build_suite() {
  std::map<std::string, Generator> s;
  s["matmul"] = [](Rng& r) {
    const std::size_t m = dim(r, 1, 4), k = dim(r, 1, 4), n = dim(r, 1, 4);
    Tensor w = uniform({m, n}, -1, 1, r);
    return Case{{uniform({m, k}, -1, 1, r), uniform({k, n}, -1, 1, r)},
                [w](Graph&, std::span<const Var> v) { return weighted(matmul(v[0], v[1]), w); }};
  };
  s["transpose"] = [](Rng& r) {
    const std::size_t m = dim(r, 1, 4), n = dim(r, 1, 4);
    Tensor w = uniform({n, m}, -1, 1, r);
    return Case{{uniform({m, n}, -1, 1, r)},
                [w](Graph&, std::span<const Var> v) { return weighted(transpose(v[0]), w); }};
  };
  auto binary = [](Var (*op)(Var, Var)) {
    return [op](Rng& r) {
      const std::size_t m = dim(r, 1, 3), n = dim(r, 2, 4);
      // Cycle through equal shapes, scalar and row-vector broadcasting.
      const std::size_t mode = dim(r, 0, 2);
      Shape bs = mode == 0 ? Shape{m, n} : (mode == 1 ? Shape{1} : Shape{n});
      Tensor w = uniform({m, n}, -1, 1, r);
      return Case{{uniform({m, n}, -2, 2, r), uniform(bs, -2, 2, r)},
                  [op, w](Graph&, std::span<const Var> v) { return weighted(op(v[0], v[1]), w); }};
    };
  };
  s["add"] = binary(&add);
  s["sub"] = binary(&sub);
  s["mul"] = binary(&mul);
  s["scale"] = [](Rng& r) {
    const double k = std::uniform_real_distribution<double>(-3, 3)(r);
    Tensor x = uniform({dim(r, 1, 3), dim(r, 1, 4)}, -2, 2, r);
    Tensor w = uniform(x.shape(), -1, 1, r);
    return Case{{x}, [k, w](Graph&, std::span<const Var> v) { return weighted(scale(v[0], k), w); }};
  };
  s["gelu"] = [](Rng& r) { return unary_case(r, &gelu, uniform({dim(r, 1, 3), dim(r, 1, 5)}, -3, 3, r)); };
  s["relu"] = [](Rng& r) { return unary_case(r, &relu, away_from({dim(r, 1, 3), dim(r, 1, 5)}, 0.0, 1e-3, r)); };
  s["exp"] = [](Rng& r) { return unary_case(r, &exp, uniform({dim(r, 1, 3), dim(r, 1, 5)}, -2, 2, r)); };
  s["log"] = [](Rng& r) { return unary_case(r, &log, uniform({dim(r, 1, 3), dim(r, 1, 5)}, 0.2, 3, r)); };
  s["square"] = [](Rng& r) { return unary_case(r, &square, uniform({dim(r, 1, 3), dim(r, 1, 5)}, -2, 2, r)); };
  s["abs"] = [](Rng& r) { return unary_case(r, &abs, away_from({dim(r, 1, 3), dim(r, 1, 5)}, 0.0, 1e-3, r)); };
  s["softplus"] = [](Rng& r) { return unary_case(r, &softplus, uniform({dim(r, 1, 3), dim(r, 1, 5)}, -4, 4, r)); };
  s["reciprocal"] = [](Rng& r) {
    Tensor x = uniform({dim(r, 1, 3), dim(r, 1, 4)}, 0.5, 2.0, r);
    for (double& v : x.data())
      if (r() & 1) v = -v;
    Tensor w = uniform(x.shape(), -1, 1, r);
    return Case{{x}, [w](Graph&, std::span<const Var> v) { return weighted(reciprocal(v[0]), w); }};
  };
  s["sum_mean"] = [](Rng& r) {
    Tensor x = uniform({dim(r, 1, 3), dim(r, 1, 4)}, -2, 2, r);
    return Case{{x}, [](Graph&, std::span<const Var> v) { return add(sum(square(v[0])), scale(mean(v[0]), 3.0)); }};
  };
  s["layernorm"] = [](Rng& r) {
    const std::size_t m = dim(r, 1, 4), d = dim(r, 2, 6);
    Tensor w = uniform({m, d}, -1, 1, r);
    return Case{{uniform({m, d}, -2, 2, r), uniform({d}, 0.5, 1.5, r), uniform({d}, -0.5, 0.5, r)},
                [w](Graph&, std::span<const Var> v) { return weighted(layernorm(v[0], v[1], v[2]), w); }};
  };
  s["softmax"] = [](Rng& r) {
    const std::size_t n = dim(r, 1, 5);
    const bool causal = r() & 1;
    const double sc = std::uniform_real_distribution<double>(0.3, 1.5)(r);
    Tensor w = uniform({n, n}, -1, 1, r);
    return Case{{uniform({n, n}, -2, 2, r), uniform({n}, 0.5, 2.0, r)},
                [w, causal, sc](Graph&, std::span<const Var> v) {
                  return weighted(masked_temperature_softmax(v[0], causal ? Mask::causal : Mask::none, v[1], sc), w);
                }};
  };
  s["slice_concat"] = [](Rng& r) {
    const std::size_t m = dim(r, 2, 4), n = dim(r, 2, 4);
    Tensor w = uniform({2 * m - 1, n}, -1, 1, r);
    return Case{{uniform({m, n}, -2, 2, r), uniform({m, n}, -2, 2, r)}, [m, n, w](Graph&, std::span<const Var> v) {
                  std::vector<Var> parts{v[0], slice(v[1], 1, m - 1, 0, n)};
                  return weighted(concat(parts, 0), w);
                }};
  };
  s["gather_rows"] = [](Rng& r) {
    const std::size_t rows = dim(r, 2, 5), d = dim(r, 1, 3);
    std::vector<int> ids;
    for (std::size_t i = 0; i < 6; ++i) ids.push_back(static_cast<int>(dim(r, 0, rows - 1)));
    Tensor w = uniform({ids.size(), d}, -1, 1, r);
    return Case{{uniform({rows, d}, -2, 2, r)},
                [ids, w](Graph&, std::span<const Var> v) { return weighted(gather_rows(v[0], ids), w); }};
  };
  s["cross_entropy"] = [](Rng& r) {
    const std::size_t rows = dim(r, 1, 4), vocab = dim(r, 2, 6);
    std::vector<int> tg;
    for (std::size_t i = 0; i < rows; ++i) tg.push_back(static_cast<int>(dim(r, 0, vocab - 1)));
    return Case{{uniform({rows, vocab}, -2, 2, r)},
                [tg](Graph&, std::span<const Var> v) { return cross_entropy(v[0], tg); }};
  };
  s["row_entropy"] = [](Rng& r) {
    const std::size_t n = dim(r, 2, 5);
    Tensor w = uniform({n}, -1, 1, r);
    return Case{{uniform({n, n}, 0.05, 1.0, r)},
                [w](Graph&, std::span<const Var> v) { return weighted(row_entropy(v[0]), w); }};
  };
  s["dead_zone_square"] = [](Rng& r) {
    const double tol = 0.5;
    Tensor x = uniform({dim(r, 1, 3), dim(r, 1, 4)}, -2, 2, r);
    for (double& v : x.data())
      if (std::fabs(std::fabs(v) - tol) < 1e-3) v += 0.01;
    Tensor w = uniform(x.shape(), -1, 1, r);
    return Case{{x}, [w, tol](Graph&, std::span<const Var> v) { return weighted(dead_zone_square(v[0], tol), w); }};
  };
  s["weight_norm"] = [](Rng& r) {
    const std::size_t in = dim(r, 1, 4), out = dim(r, 1, 4);
    Tensor w = uniform({in, out}, -1, 1, r);
    return Case{{uniform({in, out}, 0.2, 1.5, r), uniform({out}, -2, 2, r)},
                [w](Graph&, std::span<const Var> v) { return weighted(weight_norm(v[0], v[1]), w); }};
  };
  s["spectral_norm"] = [](Rng& r) {
    const std::size_t m = dim(r, 2, 4), n = dim(r, 2, 4);
    Tensor wmat = uniform({m, n}, -1, 1, r);
    Tensor u = uniform({m}, 0.1, 1, r), vv = uniform({n}, 0.1, 1, r);
    power_iteration(wmat, u, vv, 5);
    Tensor w = uniform({m, n}, -1, 1, r);
    return Case{{wmat}, [u, vv, w](Graph&, std::span<const Var> v) { return weighted(spectral_normalize(v[0], u, vv), w); }};
  };
  // Scaled fused FFN residual: beta * x + ffn(x) / alpha, checked in alpha,
  // beta, the FFN weight and the input.
  s["scaled_ffn"] = [](Rng& r) {
    const std::size_t n = dim(r, 1, 3), d = dim(r, 2, 4);
    Tensor w = uniform({n, d}, -1, 1, r);
    Tensor alpha = uniform({1}, 0.5, 2.0, r), beta = uniform({1}, 0.5, 2.0, r);
    return Case{{uniform({n, d}, -1, 1, r), uniform({d, d}, -1, 1, r), alpha, beta},
                [w](Graph&, std::span<const Var> v) {
                  FfnParams fp;
                  fp.w_fused = v[1];
                  Var f = ffn(v[0], fp, FfnKind::scaled_fused);
                  return weighted(add(mul(v[3], v[0]), mul(reciprocal(v[2]), f)), w);
                }};
  };
  // Entropy penalty through a temperature softmax: gradients reach logits,
  // temperatures and thresholds.
  s["reg_loss"] = [](Rng& r) {
    const std::size_t L = dim(r, 1, 2), H = dim(r, 1, 2), n = dim(r, 3, 5);
    RegConfig cfg;
    cfg.gamma = std::uniform_real_distribution<double>(0.0, 0.1)(r);
    cfg.per_position = r() & 1;
    std::vector<Tensor> inputs;
    inputs.push_back(uniform({L, H}, 0.1, 0.9, r));
    for (std::size_t k = 0; k < L * H; ++k) {
      inputs.push_back(uniform({n, n}, -3, 3, r));
      inputs.push_back(uniform({n}, 0.5, 2.0, r));
    }
    return Case{inputs, [L, H, n, cfg](Graph&, std::span<const Var> v) {
                  ModelOutput out;
                  out.batch = 1;
                  out.layers = L;
                  out.heads = H;
                  out.seq_len = n;
                  for (std::size_t k = 0; k < L * H; ++k)
                    out.attention.push_back(masked_temperature_softmax(v[1 + 2 * k], Mask::causal, v[2 + 2 * k], 1.0));
                  return reg_loss(out, v[0], cfg, n);
                }};
  };
  return s;
}

}  // namespace

std::vector<std::string> suite_names() {
  std::vector<std::string> names;
  for (const auto& [k, _] : build_suite()) names.push_back(k);
  return names;
}

std::vector<CheckResult> run_suite(std::optional<std::string> only, int trials, std::uint64_t seed, double tolerance) {
  const auto suite = build_suite();
  if (only && !suite.count(*only)) {
    std::string msg = "unknown gradient check '" + *only + "' (available:";
    for (const auto& [k, _] : suite) msg += " " + k;
    throw UsageError(msg + ")");
  }
  std::vector<CheckResult> results;
  for (const auto& [name, gen] : suite) {
    if (only && name != *only) continue;
    Rng rng(seed ^ std::hash<std::string>{}(name));
    CheckResult res;
    res.name = name;
    for (int t = 0; t < trials; ++t) {
      Case c = gen(rng);
      res.max_rel_error = std::max(res.max_rel_error, max_error(c.fn, c.inputs));
      ++res.trials;
    }
    res.passed = res.max_rel_error < tolerance;
    results.push_back(res);
  }
  return results;
}

}  // namespace entlab::gradcheck
