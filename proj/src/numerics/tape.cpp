#include "mblab/numerics/tape.hpp"

#include "mblab/errors.hpp"

namespace mblab {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an empty Var");
  return tape_->value(id_);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::input(Tensor value) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.needs_grad = grad_enabled_;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  auto it = param_nodes_.find(&p);
  if (it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.op = "param";
  n.value = p.value;
  n.needs_grad = grad_enabled_ && !p.frozen;
  n.param = &p;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Tape::record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
  return record(op, std::move(value), std::vector<Var>(parents), std::move(backward));
}

Var Tape::record(const char* op, Tensor value, const std::vector<Var>& parents, BackwardFn backward) {
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite output from primitive '") + op + "' with shape " +
                       shape_str(value.shape()));
  }
  Node n;
  n.op = op;
  n.value = std::move(value);
  if (grad_enabled_) {
    for (const Var& p : parents) {
      if (p.tape() != this) throw ContractError(std::string(op) + ": operand from another tape");
      if (nodes_[p.id()].needs_grad) n.needs_grad = true;
    }
  }
  if (n.needs_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Tensor& Tape::grad_ref(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

const Tensor* Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  return n.grad.empty() ? nullptr : &n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw ContractError("backward: loss from another tape");
  const Tensor& lv = nodes_.at(loss.id()).value;
  if (lv.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(lv.shape()));
  }
  grad_ref(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param && !n.param->frozen) {
      Parameter& p = *n.param;
      if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape(), 0.0);
      for (std::size_t k = 0; k < p.grad.numel(); ++k) p.grad[k] += n.grad[k];
    }
  }
}

namespace flops {
std::uint64_t& counter() {
  thread_local std::uint64_t value = 0;
  return value;
}
}  // namespace flops

}  // namespace mblab
