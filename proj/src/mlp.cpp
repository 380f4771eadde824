#include "protoalign/mlp.hpp"

#include <cmath>
#include <random>

#include "protoalign/error.hpp"

namespace protoalign {

namespace {

ad::Tensor make_leaf(Matrix m, bool learnable) {
  return learnable ? ad::Tensor::parameter(std::move(m)) : ad::Tensor::constant(std::move(m));
}

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = std::normal_distribution<double>(0.0, stddev)(rng);
  return m;
}

}  // namespace

Mlp::Mlp(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed, bool learnable) {
  if (in == 0 || hidden == 0 || out == 0) throw ShapeError("Mlp: zero-sized layer");
  std::mt19937_64 rng(seed);
  w1_ = make_leaf(gaussian(in, hidden, 1.0 / std::sqrt(static_cast<double>(in)), rng), learnable);
  b1_ = make_leaf(Matrix(1, hidden), learnable);
  w2_ = make_leaf(gaussian(hidden, out, 1.0 / std::sqrt(static_cast<double>(hidden)), rng), learnable);
  b2_ = make_leaf(Matrix(1, out), learnable);
}

ad::Tensor Mlp::forward(const ad::Tensor& x) const {
  if (x.cols() != in_dim())
    throw ShapeError("Mlp: input has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(in_dim()));
  const ad::Tensor h = ad::tanh(ad::add_row_bias(ad::matmul(x, w1_), b1_));
  return ad::add_row_bias(ad::matmul(h, w2_), b2_);
}

Mlp Mlp::clone(bool learnable) const {
  Mlp m;
  m.w1_ = make_leaf(w1_.value(), learnable);
  m.b1_ = make_leaf(b1_.value(), learnable);
  m.w2_ = make_leaf(w2_.value(), learnable);
  m.b2_ = make_leaf(b2_.value(), learnable);
  return m;
}

}  // namespace protoalign
