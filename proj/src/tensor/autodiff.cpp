#include "protoalign/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_set>

#include "protoalign/error.hpp"

namespace protoalign::ad {

namespace {
std::atomic<std::uint64_t> g_next_seq{1};
}

Tensor Tensor::parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->grad = Matrix::zeros_like(value);
  n->value = std::move(value);
  n->requires_grad = true;
  n->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(n));
}

Tensor Tensor::constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(n));
}

Tensor Tensor::make(Matrix value, std::vector<Tensor> inputs, std::function<void(Node&)> pullback) {
  auto n = std::make_shared<Node>();
  n->requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (n->requires_grad) {
    n->grad = Matrix::zeros_like(value);
    n->inputs.reserve(inputs.size());
    for (auto& t : inputs) n->inputs.push_back(t.node_);
    n->pullback = std::move(pullback);
  }
  n->value = std::move(value);
  n->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
  return Tensor(std::move(n));
}

double Tensor::item() const {
  if (value().rows() != 1 || value().cols() != 1) throw UsageError("item() on a non-scalar tensor");
  return value()(0, 0);
}

Tensor Tensor::detach() const { return constant(value()); }

void Tensor::zero_grad() {
  if (node_ && node_->requires_grad) node_->grad.fill(0.0);
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw UsageError("backward: undefined loss");
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw UsageError("backward: loss must be a 1x1 scalar, got " + std::to_string(loss.rows()) +
                     "x" + std::to_string(loss.cols()));
  }
  if (!loss.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{loss.node().get()};
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    order.push_back(n);
    for (auto& in : n->inputs)
      if (in->requires_grad) stack.push_back(in.get());
  }
  std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

  for (Node* n : order)
    if (n->pullback) n->grad.fill(0.0);
  loss.node()->grad(0, 0) += 1.0;
  for (Node* n : order)
    if (n->pullback) n->pullback(*n);
}

}  // namespace protoalign::ad
