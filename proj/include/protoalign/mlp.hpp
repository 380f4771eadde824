#pragma once

#include <cstdint>
#include <vector>

#include "protoalign/autodiff.hpp"

namespace protoalign {

// Two-layer feedforward map x -> tanh(x W1 + b1) W2 + b2.
class Mlp {
 public:
  Mlp() = default;
  // Glorot-style N(0, 1/fan_in) weights, zero biases.
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed, bool learnable = true);

  ad::Tensor forward(const ad::Tensor& x) const;

  std::size_t in_dim() const { return w1_.rows(); }
  std::size_t hidden_dim() const { return w1_.cols(); }
  std::size_t out_dim() const { return w2_.cols(); }

  // Fixed order: w1, b1, w2, b2.
  std::vector<ad::Tensor*> parameters() { return {&w1_, &b1_, &w2_, &b2_}; }
  std::vector<const ad::Tensor*> parameters() const { return {&w1_, &b1_, &w2_, &b2_}; }

  // Deep copy with the given learnability.
  Mlp clone(bool learnable) const;

 private:
  ad::Tensor w1_, b1_, w2_, b2_;
};

}  // namespace protoalign
