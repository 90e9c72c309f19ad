#pragma once

#include "amh/tensor.hpp"
#include "amh/tensor_ops.hpp"

#include <functional>
#include <string>
#include <vector>

namespace amh {

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* t, std::size_t id) : tape_(t), id_(id) {}
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so creation order is a valid
/// topological order and backward() is a single reverse sweep. Single-owner; not thread-safe.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  Var record(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

  /// Propagates `seed` (shaped like `output`) back through the tape.
  void backward(Var output, const Tensor& seed);
  /// Seeds a single-element output with 1.
  void backward(Var output);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const Tensor& value(Var v) const { return value(v.id()); }
  /// Gradient accumulated at `v` by the last backward(); zero if v did not influence the output.
  const Tensor& grad(Var v) const;
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  /// Adds `g` into the gradient buffer of node `id` (used by op backward closures).
  void accumulate(std::size_t id, const Tensor& g);
  const Tensor& grad_of(std::size_t id) const { return nodes_.at(id).grad; }

  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

  /// One line per recorded op: "<scope> <op> <shape>". Values are not included.
  std::vector<std::string> trace() const;

  class Scope {
   public:
    Scope(Tape& t, const std::string& name);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape& tape_;
    std::size_t previous_;
  };
  Scope scope(const std::string& name) { return Scope(*this, name); }

 private:
  struct Node {
    std::string op;
    std::string scope;
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool needs_grad = false;
  };
  std::size_t check(Var v) const;

  std::vector<Node> nodes_;
  std::string scope_;
  bool backward_done_ = false;
};

/// Differentiable ops. Each records one node on the tape of its first argument.
namespace ad {

Var conv2d(Var x, Var weights, const ConvSpec& spec);
Var deconv2d(Var x, Var weights, const ConvSpec& spec);
Var maxpool(Var x, Index window, Index stride);
Var sigmoid(Var x);
Var relu(Var x);
Var add(Var x, Var y);
Var sub(Var x, Var y);
Var mul(Var x, Var y);
Var scale(Var x, double s);
/// gate has 1 channel (broadcast) or the same channel count as x.
Var mul_broadcast(Var gate, Var x);
/// bias has shape (C,1,1).
Var add_bias(Var x, Var bias);
Var concat(const std::vector<Var>& xs);
Var sum(Var x);
Var mean(const std::vector<Var>& xs);

}  // namespace ad

}  // namespace amh
