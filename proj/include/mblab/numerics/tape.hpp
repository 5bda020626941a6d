#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mblab/numerics/parameter.hpp"
#include "mblab/numerics/tensor.hpp"

namespace mblab {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Receives the node's output gradient and accumulates into parent gradients
// through Tape::grad_ref.
using BackwardFn = std::function<void(Tape&, const Tensor&)>;

// Linear record of executed primitives. Node ids are assigned in execution
// order, which is a valid topological order; backward walks it in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // When disabled, no backward closures are kept (inference mode).
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor value);
  // A differentiable leaf whose gradient is readable via grad() after backward.
  Var input(Tensor value);
  // Leaf bound to a parameter; backward accumulates into Parameter::grad unless frozen.
  Var param(Parameter& p);

  // Records a primitive. Throws NumericError if `value` is not finite.
  Var record(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn backward);
  Var record(const char* op, Tensor value, const std::vector<Var>& parents, BackwardFn backward);

  bool needs_grad(Var v) const { return nodes_.at(v.id()).needs_grad; }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  // Gradient buffer of a node, allocated as zeros on first access.
  Tensor& grad_ref(std::size_t id);
  const Tensor* grad(Var v) const;

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }

 private:
  struct Node {
    std::string op;
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Node node);

  std::deque<Node> nodes_;  // references returned by value() stay valid as the tape grows
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool grad_enabled_ = true;
};

// Multiply-accumulate accounting for matrix products executed by the engine
// (2 FLOPs per MAC). Thread-local; used to cross-check analytic FLOP counts.
namespace flops {
std::uint64_t& counter();
inline void reset() { counter() = 0; }
inline void add(std::uint64_t n) { counter() += n; }
}  // namespace flops

}  // namespace mblab
