#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "idn/tensor.hpp"

namespace idn {

/// Trainable tensor plus its accumulated gradient.
struct Parameter {
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad.fill(0.0); }
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run record of primitive applications.
///
/// Nodes are appended in evaluation order, so a reverse sweep over node ids is
/// a valid topological order for reverse-mode differentiation. Nodes whose
/// inputs are all constants carry no rule and are skipped by the sweep.
class Tape {
 public:
  /// Reads the node's incoming cotangent through Tape::grad_in and accumulates
  /// into its inputs with Tape::accumulate.
  using VjpRule = std::function<void(Tape&, std::size_t self)>;

  /// With grad_enabled = false, parameters enter as constants and no rules are kept.
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Free leaf whose gradient can be read back with grad().
  Var variable(Tensor value);
  /// Leaf bound to a Parameter; backward() accumulates into Parameter::grad.
  Var parameter(Parameter& p);

  /// Append a node. The rule is dropped when no input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, VjpRule rule);
  Var record(Tensor value, const std::vector<Var>& inputs, VjpRule rule);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }

  /// Cotangent flowing into node `id` during a sweep.
  const Tensor& grad_in(std::size_t id) const { return nodes_[id].grad; }
  /// Mutable gradient buffer of `id`, zero-initialized on first touch within a sweep.
  /// Returns nullptr when the node does not require a gradient.
  Tensor* accumulate(std::size_t id);

  /// Reverse sweep from a scalar loss; parameter gradients are accumulated (added).
  void backward(Var loss);

  /// Reverse sweep seeded with an arbitrary cotangent. Parameter gradients are
  /// not touched; read leaf gradients with grad().
  void propagate(Var output, const Tensor& cotangent);

  /// Gradient of a node after the most recent sweep (zeros if unreached).
  Tensor grad(Var v) const;

  /// v^T J where J is the Jacobian of `output` with respect to `input`.
  Tensor vjp(Var output, Var input, const Tensor& cotangent);

  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    VjpRule rule;
    Parameter* param = nullptr;
  };

  void sweep(std::size_t output, const Tensor& cotangent);
  std::size_t push(Node node);

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

/// Functional form: v^T J_f(x).
Tensor vjp(const std::function<Var(Var)>& f, const Tensor& x, const Tensor& v);

// Primitive set. Rank-2 operands are (batch, features); "features" ops act on the last axis.

Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var negate(Var a);
Var scalar_mul(Var a, double s);
Var elementwise_mul(Var a, Var b);
/// a * s where s is a one-element tensor; differentiable in both.
Var scale(Var a, Var s);
/// a + s broadcast over every element; s is a one-element tensor.
Var shift(Var a, Var s);
/// a + b with b (features) broadcast over rows.
Var add_row(Var a, Var b);
Var concat_features(Var a, Var b);
/// x W^T (+ b): x is (batch, in), W is (out, in), b has `out` elements; b may be an invalid Var.
Var linear(Var x, Var w, Var b = {});
/// [sa * a, sb * b] along features; sa and sb are one-element tensors.
Var concat_scaled(Var a, Var sa, Var b, Var sb);
/// d * [t, t, ...]: t is repeated along features to d's width.
Var mul_tiled(Var d, Var t);
Var concat_features(const std::vector<Var>& parts);
std::vector<Var> split_features(Var a, const std::vector<std::size_t>& sizes);
Var sum(Var a);
/// Per-row sum of a rank-2 tensor, shape (batch, 1).
Var sum_features(Var a);
Var mean(Var a);
Var log(Var a);
Var exp(Var a);

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator-(Var a);
Var operator*(Var a, double s);

}  // namespace idn
