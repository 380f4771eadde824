#pragma once

// Reverse-mode differentiation over Matrix values.
//
// Every operation executed on Tensors records a node carrying a global
// sequence number. backward() collects the nodes reachable from the loss and
// replays their pullbacks in strictly decreasing sequence order, i.e. the
// exact reverse of execution. A detached tensor is a fresh leaf with no
// producers, so nothing upstream of it can receive gradient.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "protoalign/matrix.hpp"

namespace protoalign::ad {

struct Node {
  Matrix value;
  Matrix grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> pullback;
};

class Tensor {
 public:
  Tensor() = default;

  // Leaf holding learnable values; receives gradient.
  static Tensor parameter(Matrix value);
  // Leaf that never receives gradient.
  static Tensor constant(Matrix value);
  static Tensor scalar_constant(double v) { return constant(Matrix(1, 1, v)); }

  bool defined() const noexcept { return node_ != nullptr; }
  const Matrix& value() const { return node_->value; }
  // In-place access for optimizers, EMA and renormalization. Must not be used
  // on a tensor that is part of a graph still awaiting backward().
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  Matrix& mutable_grad() { return node_->grad; }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  double item() const;

  Tensor detach() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

  // Records a new node; used by the op implementations.
  static Tensor make(Matrix value, std::vector<Tensor> inputs, std::function<void(Node&)> pullback);

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
};

// Populates grad buffers of every requires_grad tensor reachable from `loss`.
// Leaf gradients accumulate across calls; clear them with zero_grad().
void backward(const Tensor& loss);

// --- differentiable operations -------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
// a[i][j] + bias[0][j]
Tensor add_row_bias(const Tensor& a, const Tensor& bias);
// a / s for a 1x1 tensor s
Tensor divide_by_scalar(const Tensor& a, const Tensor& s);
Tensor tanh(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// sum_k weights[k] * terms[k] over 1x1 terms, accumulated in index order.
Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights);

Tensor row_softmax(const Tensor& x, double temperature);
Tensor row_softmax(const Tensor& x, const Tensor& temperature);
Tensor log_row_softmax(const Tensor& x);
Tensor l2_normalize_rows(const Tensor& x);

// Mean over rows of -sum_j target_ij * log softmax(logits/temperature)_ij.
// Only the value of `target` is used; it never receives gradient.
Tensor soft_cross_entropy(const Tensor& logits, const Matrix& target, double temperature);
Tensor soft_cross_entropy(const Tensor& logits, const Matrix& target, const Tensor& temperature);

// Frobenius product <constant, x>; the constant side gets no gradient.
Tensor frobenius(const Matrix& constant, const Tensor& x);

Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices);
// Per-row inner product, result rows x 1.
Tensor row_dot(const Tensor& a, const Tensor& b);

}  // namespace protoalign::ad
