#include "entlab/graph.hpp"

#include <algorithm>

#include "entlab/errors.hpp"

namespace entlab {

const char* op_name(OpTag tag) {
  switch (tag) {
    case OpTag::constant: return "constant";
    case OpTag::parameter: return "parameter";
    case OpTag::matmul: return "matmul";
    case OpTag::transpose: return "transpose";
    case OpTag::reshape: return "reshape";
    case OpTag::add: return "add";
    case OpTag::sub: return "sub";
    case OpTag::mul: return "mul";
    case OpTag::scale: return "scale";
    case OpTag::add_scalar: return "add_scalar";
    case OpTag::gelu: return "gelu";
    case OpTag::relu: return "relu";
    case OpTag::exp: return "exp";
    case OpTag::log: return "log";
    case OpTag::square: return "square";
    case OpTag::abs: return "abs";
    case OpTag::softplus: return "softplus";
    case OpTag::reciprocal: return "reciprocal";
    case OpTag::sum: return "sum";
    case OpTag::mean: return "mean";
    case OpTag::layernorm: return "layernorm";
    case OpTag::softmax: return "softmax";
    case OpTag::slice: return "slice";
    case OpTag::concat: return "concat";
    case OpTag::gather_rows: return "gather_rows";
    case OpTag::cross_entropy: return "cross_entropy";
    case OpTag::row_entropy: return "row_entropy";
    case OpTag::dead_zone_square: return "dead_zone_square";
    case OpTag::weight_norm: return "weight_norm";
    case OpTag::spectral_norm: return "spectral_norm";
    case OpTag::custom: return "custom";
  }
  return "unknown";
}

const Tensor& BackwardCtx::out() const { return g_.nodes_[self_].value; }
const Tensor& BackwardCtx::dout() const { return g_.nodes_[self_].grad; }
const Tensor& BackwardCtx::in(std::size_t k) const { return g_.nodes_[g_.nodes_[self_].inputs[k]].value; }
bool BackwardCtx::needs(std::size_t k) const { return g_.nodes_[g_.nodes_[self_].inputs[k]].requires_grad; }
Tensor& BackwardCtx::din(std::size_t k) { return g_.grad_buffer(g_.nodes_[self_].inputs[k]); }

Var Graph::constant(Tensor value) {
  Node n;
  n.tag = OpTag::constant;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::param(Parameter& p) {
  Node n;
  n.tag = OpTag::parameter;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::record(OpTag tag, Tensor value, std::span<const Var> inputs, BackwardFn backward) {
  Node n;
  n.tag = tag;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  bool any = false;
  for (const Var& v : inputs) {
    if (v.graph != this) throw UsageError(std::string("operand of ") + op_name(tag) + " belongs to another graph");
    n.inputs.push_back(v.id);
    any = any || nodes_[v.id].requires_grad;
  }
  n.requires_grad = any && backward != nullptr;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Graph::Node& Graph::node(Var v) const {
  if (v.graph != this || v.id >= nodes_.size()) throw UsageError("variable does not belong to this graph");
  return nodes_[v.id];
}

Tensor& Graph::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

void Graph::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value.size() != 1)
    throw UsageError("backward() needs a scalar loss, got shape " + shape_str(root.value.shape()));
  for (auto& n : nodes_) n.grad = Tensor();
  if (!root.requires_grad) return;
  grad_buffer(loss.id).fill(1.0);
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.param) {
      auto& pg = n.param->grad.storage();
      const auto& g = n.grad.storage();
      for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
    } else if (n.backward) {
      BackwardCtx ctx(*this, id);
      n.backward(ctx);
    }
  }
}

}  // namespace entlab
