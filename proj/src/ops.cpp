#include "entlab/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "entlab/errors.hpp"

namespace entlab {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC view(const Tensor& t) { return MapC(t.raw(), t.rows(), t.cols()); }
Map view(Tensor& t) { return Map(t.raw(), t.rows(), t.cols()); }

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
}

Graph& graph_of(Var a) {
  if (!a.graph) throw UsageError("variable is not attached to a graph");
  return *a.graph;
}

// ---- broadcasting ----

enum class Bcast { full, scalar, row };

Bcast classify(const Tensor& x, const Shape& out) {
  if (x.shape() == out) return Bcast::full;
  if (x.size() == 1) return Bcast::scalar;
  return Bcast::row;
}

bool is_row_of(const Tensor& r, const Tensor& m) {
  if (m.rank() != 2 || r.size() != m.cols()) return false;
  return r.rank() == 1 || (r.rank() == 2 && r.rows() == 1);
}

Shape broadcast_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.size() == 1) return a.shape();
  if (a.size() == 1) return b.shape();
  if (is_row_of(b, a)) return a.shape();
  if (is_row_of(a, b)) return b.shape();
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) + " with " +
                       shape_str(b.shape()));
}

inline std::size_t bidx(Bcast m, std::size_t i, std::size_t cols) {
  switch (m) {
    case Bcast::full: return i;
    case Bcast::scalar: return 0;
    case Bcast::row: return i % cols;
  }
  return i;
}

template <class Fwd, class DA, class DB>
Var binary(OpTag tag, const char* name, Var a, Var b, Fwd fwd, DA da, DB db) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Shape shape = broadcast_shape(av, bv, name);
  const Bcast ma = classify(av, shape), mb = classify(bv, shape);
  Tensor out(shape);
  const std::size_t cols = out.cols();
  if (ma == Bcast::full && mb == Bcast::full) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[bidx(ma, i, cols)], bv[bidx(mb, i, cols)]);
  }
  return g.record(tag, std::move(out), {a, b}, [=](BackwardCtx& c) {
    const Tensor& x = c.in(0);
    const Tensor& y = c.in(1);
    const Tensor& d = c.dout();
    const std::size_t n = d.size(), cc = d.cols();
    if (ma == Bcast::full && mb == Bcast::full) {
      if (c.needs(0)) {
        Tensor& gx = c.din(0);
        for (std::size_t i = 0; i < n; ++i) gx[i] += d[i] * da(x[i], y[i]);
      }
      if (c.needs(1)) {
        Tensor& gy = c.din(1);
        for (std::size_t i = 0; i < n; ++i) gy[i] += d[i] * db(x[i], y[i]);
      }
      return;
    }
    if (c.needs(0)) {
      Tensor& gx = c.din(0);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = bidx(ma, i, cc), ib = bidx(mb, i, cc);
        gx[ia] += d[i] * da(x[ia], y[ib]);
      }
    }
    if (c.needs(1)) {
      Tensor& gy = c.din(1);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = bidx(ma, i, cc), ib = bidx(mb, i, cc);
        gy[ib] += d[i] * db(x[ia], y[ib]);
      }
    }
  });
}

// Elementwise unary op; dfn(x, y) is the derivative given input x and output y.
template <class Fn, class DFn>
Var unary(OpTag tag, Var a, Fn fn, DFn dfn) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fn(av[i]);
  return g.record(tag, std::move(out), {a}, [=](BackwardCtx& c) {
    const Tensor& x = c.in(0);
    const Tensor& y = c.out();
    const Tensor& d = c.dout();
    Tensor& gx = c.din(0);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += d[i] * dfn(x[i], y[i]);
  });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, "matmul");
  require_rank2(bv, "matmul");
  if (av.cols() != bv.rows())
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(av.shape()) + " x " +
                         shape_str(bv.shape()));
  Tensor out({av.rows(), bv.cols()});
  view(out).noalias() = view(av) * view(bv);
  return g.record(OpTag::matmul, std::move(out), {a, b}, [](BackwardCtx& c) {
    if (c.needs(0)) view(c.din(0)).noalias() += view(c.dout()) * view(c.in(1)).transpose();
    if (c.needs(1)) view(c.din(1)).noalias() += view(c.in(0)).transpose() * view(c.dout());
  });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  require_rank2(av, "transpose");
  Tensor out({av.cols(), av.rows()});
  view(out) = view(av).transpose();
  return g.record(OpTag::transpose, std::move(out), {a},
                  [](BackwardCtx& c) { view(c.din(0)) += view(c.dout()).transpose(); });
}

Var reshape(Var a, Shape shape) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  if (shape_numel(shape) != av.size())
    throw DimensionError("reshape: " + shape_str(av.shape()) + " to " + shape_str(shape));
  Tensor out(std::move(shape), av.storage());
  return g.record(OpTag::reshape, std::move(out), {a}, [](BackwardCtx& c) {
    Tensor& gx = c.din(0);
    const Tensor& d = c.dout();
    for (std::size_t i = 0; i < d.size(); ++i) gx[i] += d[i];
  });
}

Var add(Var a, Var b) {
  return binary(
      OpTag::add, "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      OpTag::sub, "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      OpTag::mul, "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var scale(Var a, double k) {
  return unary(
      OpTag::scale, a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Var add_scalar(Var a, double k) {
  return unary(
      OpTag::add_scalar, a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Var gelu(Var a) {
  Graph& g = graph_of(a);
  ++g.op_counts().gelu;
  const Tensor& av = a.value();
  const auto n = static_cast<Eigen::Index>(av.size());
  // 0.5 x (1 + tanh z) == x sigmoid(2z); the sigmoid is kept for backward.
  Eigen::Map<const Eigen::ArrayXd> x(av.raw(), n);
  auto sig = std::make_shared<Eigen::ArrayXd>(
      (1.0 + (-2.0 * kGeluC * (x + kGeluA * x.cube())).exp()).inverse());
  Tensor out(av.shape());
  Eigen::Map<Eigen::ArrayXd>(out.raw(), n) = x * *sig;
  return g.record(OpTag::gelu, std::move(out), {a}, [sig](BackwardCtx& c) {
    const Tensor& in = c.in(0);
    const auto m = static_cast<Eigen::Index>(in.size());
    Eigen::Map<const Eigen::ArrayXd> xv(in.raw(), m), d(c.dout().raw(), m);
    Eigen::Map<Eigen::ArrayXd> gx(c.din(0).raw(), m);
    const auto& s = *sig;
    gx += d * (s + 2.0 * kGeluC * xv * s * (1.0 - s) * (1.0 + 3.0 * kGeluA * xv.square()));
  });
}

Var relu(Var a) {
  ++graph_of(a).op_counts().relu;
  return unary(
      OpTag::relu, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(
      OpTag::exp, a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().data())
    if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
  return unary(
      OpTag::log, a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return unary(
      OpTag::square, a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var abs(Var a) {
  return unary(
      OpTag::abs, a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var softplus(Var a) {
  return unary(
      OpTag::softplus, a, [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var reciprocal(Var a, double min_abs) {
  auto clamp = [min_abs](double x) { return std::fabs(x) >= min_abs ? x : (x < 0.0 ? -min_abs : min_abs); };
  return unary(
      OpTag::reciprocal, a, [clamp](double x) { return 1.0 / clamp(x); },
      [min_abs](double x, double y) { return std::fabs(x) >= min_abs ? -y * y : 0.0; });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return g.record(OpTag::sum, Tensor::scalar(s), {a}, [](BackwardCtx& c) {
    const double d = c.dout()[0];
    for (double& v : c.din(0).data()) v += d;
  });
}

Var mean(Var a) {
  Graph& g = graph_of(a);
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  const double n = static_cast<double>(av.size());
  return g.record(OpTag::mean, Tensor::scalar(s / n), {a}, [n](BackwardCtx& c) {
    const double d = c.dout()[0] / n;
    for (double& v : c.din(0).data()) v += d;
  });
}

Var layernorm(Var x, Var gain, Var bias) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require_rank2(xv, "layernorm");
  const std::size_t rows = xv.rows(), d = xv.cols();
  if (d < 2) throw DimensionError("layernorm needs at least 2 features, got " + shape_str(xv.shape()));
  if (gain.value().size() != d || bias.value().size() != d)
    throw DimensionError("layernorm: gain/bias " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) +
                         " do not match " + shape_str(xv.shape()));
  ++g.op_counts().layernorm;
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  Tensor out(xv.shape());
  // Normalized activations and reciprocal std are kept for the backward pass.
  Tensor xhat(xv.shape());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.raw() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * rstd[r];
      xhat(r, j) = h;
      out(r, j) = h * gv[j] + bv[j];
    }
  }
  return g.record(OpTag::layernorm, std::move(out), {x, gain, bias},
                  [xhat = std::move(xhat), rstd = std::move(rstd), rows, d](BackwardCtx& c) {
                    const Tensor& dy = c.dout();
                    const Tensor& gv = c.in(1);
                    if (c.needs(0)) {
                      Tensor& dx = c.din(0);
                      std::vector<double> dh(d);
                      for (std::size_t r = 0; r < rows; ++r) {
                        double m1 = 0.0, m2 = 0.0;
                        for (std::size_t j = 0; j < d; ++j) {
                          dh[j] = dy(r, j) * gv[j];
                          m1 += dh[j];
                          m2 += dh[j] * xhat(r, j);
                        }
                        m1 /= static_cast<double>(d);
                        m2 /= static_cast<double>(d);
                        for (std::size_t j = 0; j < d; ++j) dx(r, j) += rstd[r] * (dh[j] - m1 - xhat(r, j) * m2);
                      }
                    }
                    if (c.needs(1)) {
                      Tensor& dg = c.din(1);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < d; ++j) dg[j] += dy(r, j) * xhat(r, j);
                    }
                    if (c.needs(2)) {
                      Tensor& db = c.din(2);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < d; ++j) db[j] += dy(r, j);
                    }
                  });
}

Var masked_temperature_softmax(Var logits, Mask mask, std::optional<Var> temperature, double scale) {
  Graph& g = graph_of(logits);
  const Tensor& z = logits.value();
  require_rank2(z, "masked_temperature_softmax");
  const std::size_t rows = z.rows(), cols = z.cols();
  if (mask == Mask::causal && rows > cols)
    throw DimensionError("causal softmax needs rows <= cols, got " + shape_str(z.shape()));
  std::vector<double> t(rows, 1.0);
  if (temperature) {
    const Tensor& tv = temperature->value();
    if (tv.size() != rows)
      throw DimensionError("temperature " + shape_str(tv.shape()) + " does not match " + std::to_string(rows) +
                           " query rows");
    for (std::size_t i = 0; i < rows; ++i) {
      if (!(tv[i] > 0.0)) throw DomainError("softmax temperature must be positive, got " + std::to_string(tv[i]));
      t[i] = tv[i];
    }
  }
  ++g.op_counts().softmax;
  Tensor p(z.shape());
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t n = mask == Mask::causal ? i + 1 : cols;
    const double k = scale / t[i];
    const double* zr = z.raw() + i * cols;
    double* pr = p.raw() + i * cols;
    double mx = k * zr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, k * zr[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      pr[j] = std::exp(k * zr[j] - mx);
      s += pr[j];
    }
    for (std::size_t j = 0; j < n; ++j) pr[j] /= s;
  }
  std::vector<Var> inputs{logits};
  if (temperature) inputs.push_back(*temperature);
  const bool has_t = temperature.has_value();
  return g.record(OpTag::softmax, std::move(p), inputs, [=, t = std::move(t)](BackwardCtx& c) {
    const Tensor& p = c.out();
    const Tensor& d = c.dout();
    const Tensor& z = c.in(0);
    const bool need_z = c.needs(0);
    const bool need_t = has_t && c.needs(1);
    Tensor* dz = need_z ? &c.din(0) : nullptr;
    Tensor* dt = need_t ? &c.din(1) : nullptr;
    for (std::size_t i = 0; i < rows; ++i) {
      const std::size_t n = mask == Mask::causal ? i + 1 : cols;
      const double k = scale / t[i];
      const double* pr = p.raw() + i * cols;
      const double* dr = d.raw() + i * cols;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += pr[j] * dr[j];
      double tacc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double du = pr[j] * (dr[j] - dot);  // gradient w.r.t. the scaled logit k * z_ij
        if (dz) (*dz)(i, j) += du * k;
        tacc += du * k * z(i, j);
      }
      if (dt) (*dt)[i] -= tacc / t[i];
    }
  });
}

Var slice(Var x, std::size_t r0, std::size_t nr, std::size_t c0, std::size_t nc) {
  Graph& g = graph_of(x);
  const Tensor& xv = x.value();
  require_rank2(xv, "slice");
  if (nr == 0 || nc == 0 || r0 + nr > xv.rows() || c0 + nc > xv.cols())
    throw DimensionError("slice [" + std::to_string(r0) + "+" + std::to_string(nr) + ", " + std::to_string(c0) +
                         "+" + std::to_string(nc) + "] out of range for " + shape_str(xv.shape()));
  Tensor out({nr, nc});
  view(out) = view(xv).block(r0, c0, nr, nc);
  return g.record(OpTag::slice, std::move(out), {x},
                  [=](BackwardCtx& c) { view(c.din(0)).block(r0, c0, nr, nc) += view(c.dout()); });
}

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw UsageError("concat of zero tensors");
  if (axis != 0 && axis != 1) throw UsageError("concat axis must be 0 or 1");
  Graph& g = graph_of(parts[0]);
  std::size_t rows = 0, cols = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    require_rank2(v, "concat");
    if (axis == 0) {
      if (cols && v.cols() != cols) throw DimensionError("concat rows: column mismatch " + shape_str(v.shape()));
      cols = v.cols();
      rows += v.rows();
    } else {
      if (rows && v.rows() != rows) throw DimensionError("concat cols: row mismatch " + shape_str(v.shape()));
      rows = v.rows();
      cols += v.cols();
    }
  }
  Tensor out({rows, cols});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    offsets.push_back(off);
    if (axis == 0) {
      view(out).block(off, 0, v.rows(), cols) = view(v);
      off += v.rows();
    } else {
      view(out).block(0, off, rows, v.cols()) = view(v);
      off += v.cols();
    }
  }
  return g.record(OpTag::concat, std::move(out), parts, [offsets, axis](BackwardCtx& c) {
    const auto d = view(c.dout());
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      if (!c.needs(k)) continue;
      Tensor& gk = c.din(k);
      if (axis == 0)
        view(gk) += d.block(offsets[k], 0, gk.rows(), gk.cols());
      else
        view(gk) += d.block(0, offsets[k], gk.rows(), gk.cols());
    }
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  Graph& g = graph_of(table);
  const Tensor& tv = table.value();
  require_rank2(tv, "gather_rows");
  if (ids.empty()) throw UsageError("gather_rows with no ids");
  const std::size_t d = tv.cols();
  Tensor out({ids.size(), d});
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows())
      throw InputError("token id " + std::to_string(ids[r]) + " outside vocabulary of size " +
                       std::to_string(tv.rows()));
    std::copy_n(tv.raw() + ids[r] * d, d, out.raw() + r * d);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return g.record(OpTag::gather_rows, std::move(out), {table}, [idx = std::move(idx), d](BackwardCtx& c) {
    Tensor& gt = c.din(0);
    const Tensor& dy = c.dout();
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < d; ++j) gt(idx[r], j) += dy(r, j);
  });
}

Var cross_entropy(Var logits, std::span<const int> targets) {
  Graph& g = graph_of(logits);
  const Tensor& z = logits.value();
  require_rank2(z, "cross_entropy");
  const std::size_t rows = z.rows(), v = z.cols();
  if (targets.size() != rows)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(z.shape()) + " logits");
  Tensor probs(z.shape());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= v)
      throw InputError("target id " + std::to_string(targets[r]) + " outside vocabulary of size " +
                       std::to_string(v));
    const double* zr = z.raw() + r * v;
    double* pr = probs.raw() + r * v;
    const double mx = *std::max_element(zr, zr + v);
    double s = 0.0;
    for (std::size_t j = 0; j < v; ++j) {
      pr[j] = std::exp(zr[j] - mx);
      s += pr[j];
    }
    for (std::size_t j = 0; j < v; ++j) pr[j] /= s;
    loss += std::log(s) + mx - zr[targets[r]];
  }
  loss /= static_cast<double>(rows);
  std::vector<int> tg(targets.begin(), targets.end());
  return g.record(OpTag::cross_entropy, Tensor::scalar(loss), {logits},
                  [probs = std::move(probs), tg = std::move(tg), rows, v](BackwardCtx& c) {
                    const double d = c.dout()[0] / static_cast<double>(rows);
                    Tensor& gz = c.din(0);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t j = 0; j < v; ++j) gz(r, j) += d * probs(r, j);
                      gz(r, tg[r]) -= d;
                    }
                  });
}

Var row_entropy(Var probs, double eps) {
  Graph& g = graph_of(probs);
  const Tensor& p = probs.value();
  require_rank2(p, "row_entropy");
  const std::size_t rows = p.rows(), cols = p.cols();
  Tensor out({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double e = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const double a = p(i, j);
      if (a < 0.0) throw InputError("negative probability " + std::to_string(a) + " in attention matrix");
      if (a > 0.0) e -= a * std::log(a + eps);
    }
    out[i] = e;
  }
  return g.record(OpTag::row_entropy, std::move(out), {probs}, [rows, cols, eps](BackwardCtx& c) {
    const Tensor& p = c.in(0);
    const Tensor& d = c.dout();
    Tensor& gp = c.din(0);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) {
        const double a = p(i, j);
        if (a > 0.0) gp(i, j) -= d[i] * (std::log(a + eps) + a / (a + eps));
      }
  });
}

Var dead_zone_square(Var delta, double tol) {
  return unary(
      OpTag::dead_zone_square, delta, [tol](double x) { return std::fabs(x) > tol ? x * x : 0.0; },
      [tol](double x, double) { return std::fabs(x) > tol ? 2.0 * x : 0.0; });
}

Var weight_norm(Var v, Var g) {
  Graph& gr = graph_of(v);
  const Tensor& vv = v.value();
  require_rank2(vv, "weight_norm");
  const std::size_t in = vv.rows(), out_dim = vv.cols();
  if (g.value().size() != out_dim)
    throw DimensionError("weight_norm: gain " + shape_str(g.shape()) + " for " + shape_str(vv.shape()));
  const Tensor& gv = g.value();
  std::vector<double> norms(out_dim, 0.0);
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < out_dim; ++j) norms[j] += vv(i, j) * vv(i, j);
  for (auto& n : norms) {
    n = std::sqrt(n);
    if (n == 0.0) throw DomainError("weight_norm: zero direction vector");
  }
  Tensor w(vv.shape());
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < out_dim; ++j) w(i, j) = gv[j] * vv(i, j) / norms[j];
  return gr.record(OpTag::weight_norm, std::move(w), {v, g},
                   [norms = std::move(norms), in, out_dim](BackwardCtx& c) {
                     const Tensor& vv = c.in(0);
                     const Tensor& gv = c.in(1);
                     const Tensor& d = c.dout();
                     // proj_j = <u_j, dW_j> with u_j the unit direction.
                     std::vector<double> proj(out_dim, 0.0);
                     for (std::size_t i = 0; i < in; ++i)
                       for (std::size_t j = 0; j < out_dim; ++j) proj[j] += d(i, j) * vv(i, j) / norms[j];
                     if (c.needs(0)) {
                       Tensor& dv = c.din(0);
                       for (std::size_t i = 0; i < in; ++i)
                         for (std::size_t j = 0; j < out_dim; ++j)
                           dv(i, j) += gv[j] / norms[j] * (d(i, j) - vv(i, j) / norms[j] * proj[j]);
                     }
                     if (c.needs(1)) {
                       Tensor& dg = c.din(1);
                       for (std::size_t j = 0; j < out_dim; ++j) dg[j] += proj[j];
                     }
                   });
}

Var spectral_normalize(Var w, const Tensor& u, const Tensor& v) {
  Graph& g = graph_of(w);
  const Tensor& wv = w.value();
  require_rank2(wv, "spectral_normalize");
  if (u.size() != wv.rows() || v.size() != wv.cols())
    throw DimensionError("spectral_normalize: vectors " + shape_str(u.shape()) + "/" + shape_str(v.shape()) +
                         " for " + shape_str(wv.shape()));
  const Eigen::Map<const Eigen::VectorXd> uu(u.raw(), u.size()), vv(v.raw(), v.size());
  const double sigma = uu.dot(view(wv) * vv);
  if (!(std::fabs(sigma) > 0.0)) throw DomainError("spectral_normalize: zero singular value estimate");
  Tensor out(wv.shape());
  view(out) = view(wv) / sigma;
  return g.record(OpTag::spectral_norm, std::move(out), {w}, [u, v, sigma](BackwardCtx& c) {
    const auto d = view(c.dout());
    const double inner = (d.array() * view(c.in(0)).array()).sum();
    const Eigen::Map<const Eigen::VectorXd> uu(u.raw(), u.size()), vv(v.raw(), v.size());
    view(c.din(0)) += d / sigma - (inner / (sigma * sigma)) * (uu * vv.transpose());
  });
}

double power_iteration(const Tensor& w, Tensor& u, Tensor& v, int iters) {
  require_rank2(w, "power_iteration");
  if (u.size() != w.rows() || v.size() != w.cols())
    throw DimensionError("power_iteration: vectors do not match " + shape_str(w.shape()));
  Eigen::Map<Eigen::VectorXd> uu(u.raw(), u.size()), vv(v.raw(), v.size());
  const auto wm = view(w);
  for (int k = 0; k < iters; ++k) {
    vv = wm.transpose() * uu;
    vv /= std::max(vv.norm(), 1e-12);
    uu = wm * vv;
    uu /= std::max(uu.norm(), 1e-12);
  }
  return uu.dot(wm * vv);
}

}  // namespace entlab
