#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "tsp/numcore/param_store.hpp"
#include "tsp/numcore/tensor.hpp"

namespace tsp::num {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode autodiff tape over whole tensors.
///
/// Nodes are appended in evaluation order, so a reverse sweep over the node
/// list is a valid topological order. Parameters are pulled from a ParamStore
/// once per tape and cached by name so every use accumulates into one leaf.
class Tape {
 public:
  // Called during the reverse sweep with the node's accumulated gradient.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(const ParamStore* store = nullptr) : store_(store) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var param(const std::string& name);

  // Appends an op node. Throws NumericError if `value` is not finite.
  Var push(Tensor value, std::vector<std::size_t> parents, BackwardFn backward, const char* op);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient buffer of `id`, zero-initialised on first access during backward.
  Tensor& grad_buffer(std::size_t id);

  // Seeds d(root)/d(root) = 1 and sweeps backwards. Root must be a scalar.
  void backward(Var root);

  // Gradient w.r.t. a node after backward(); zeros if nothing flowed into it.
  Tensor grad(Var v) const;

  // Gradients of every parameter that was pulled onto this tape.
  Gradients param_grads() const;

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
    const char* op = "";
  };

  const ParamStore* store_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_ids_;
  bool backward_done_ = false;
};

// ---- Ops ------------------------------------------------------------------
// All ops take and return Vars on the same tape. Shapes are checked and a
// mismatch throws ContractViolation.

Var matmul(Var a, Var b);                 // [m,k] x [k,n] -> [m,n]
Var dense(Var x, Var w, Var b);           // x·W + b, b broadcast over rows
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                    // Hadamard
Var scale(Var a, double s);
Var one_minus(Var a);                     // 1 - a
Var sigmoid(Var a);
Var tanh(Var a);
Var square(Var a);
Var mul_const(Var a, const Tensor& c);    // a ⊙ c, no gradient into c
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var log_softmax_rows(Var logits);
Var entropy_rows(Var logits);             // [m,n] -> [m,1], H = -Σ p log p
// [m,n] -> [m,1]; row r takes column idx[r], or 0 (no gradient) when idx[r] < 0.
Var pick_rows(Var a, const std::vector<int>& idx);
// Elementwise binary cross-entropy against constant targets in [0,1].
Var bce_with_logits(Var logits, const Tensor& targets);
Var sum_all(Var a);                       // -> [1]

}  // namespace tsp::num
