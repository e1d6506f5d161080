#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "entlab/tensor.hpp"

namespace entlab {

enum class OpTag : std::uint8_t {
  constant,
  parameter,
  matmul,
  transpose,
  reshape,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  gelu,
  relu,
  exp,
  log,
  square,
  abs,
  softplus,
  reciprocal,
  sum,
  mean,
  layernorm,
  softmax,
  slice,
  concat,
  gather_rows,
  cross_entropy,
  row_entropy,
  dead_zone_square,
  weight_norm,
  spectral_norm,
  custom,
};

const char* op_name(OpTag tag);

/// Number of nonlinear-operator evaluations recorded in a graph. One call of
/// the corresponding op counts once regardless of how many rows it covers.
struct OpCounts {
  std::size_t softmax = 0;
  std::size_t layernorm = 0;
  std::size_t gelu = 0;
  std::size_t relu = 0;
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid for the graph's lifetime.
struct Var {
  Graph* graph = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Arguments handed to a node's backward function.
class BackwardCtx {
 public:
  BackwardCtx(Graph& g, std::uint32_t self) : g_(g), self_(self) {}

  const Tensor& out() const;
  /// Gradient flowing into this node's output.
  const Tensor& dout() const;
  const Tensor& in(std::size_t k) const;
  bool needs(std::size_t k) const;
  /// Gradient buffer of input k, allocated on first use.
  Tensor& din(std::size_t k);

 private:
  Graph& g_;
  std::uint32_t self_;
};

/// Tape of operations recorded in insertion (hence topological) order.
/// Not thread-safe; independent graphs may live on different threads.
class Graph {
 public:
  using BackwardFn = std::function<void(BackwardCtx&)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to an external parameter; backward() adds into p.grad.
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return node(v).value; }
  /// Gradient from the most recent backward(); zeros when unreached.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  OpTag tag(Var v) const { return node(v).tag; }
  std::size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

  /// Reverse sweep from a scalar loss. Parameter gradients accumulate across
  /// calls; intermediate node gradients are reset each call.
  void backward(Var loss);

  const OpCounts& op_counts() const { return counts_; }
  OpCounts& op_counts() { return counts_; }

  /// Appends a node. The node requires grad iff any input does and a
  /// backward function is given.
  Var record(OpTag tag, Tensor value, std::span<const Var> inputs, BackwardFn backward);
  Var record(OpTag tag, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(tag, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
  }

 private:
  friend class BackwardCtx;

  struct Node {
    OpTag tag = OpTag::constant;
    Tensor value;
    Tensor grad;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;
  Tensor& grad_buffer(std::uint32_t id);

  std::deque<Node> nodes_;
  OpCounts counts_;
  bool grad_enabled_;
};

inline const Tensor& Var::value() const { return graph->value(*this); }

}  // namespace entlab
