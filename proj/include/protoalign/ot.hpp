#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "protoalign/autodiff.hpp"
#include "protoalign/matrix.hpp"

namespace protoalign::ot {

// Nonnegative N x K cost matrix.
class CostMatrix {
 public:
  // Entries must be finite and >= -1e-12 (rounding slack for 1 - cos).
  explicit CostMatrix(Matrix values);
  const Matrix& values() const noexcept { return values_; }
  std::size_t rows() const noexcept { return values_.rows(); }
  std::size_t cols() const noexcept { return values_.cols(); }

 private:
  Matrix values_;
};

struct IpotConfig {
  double epsilon = 1.0;      // proximal regularization
  int outer_iters = 50;
  int inner_iters = 1;       // Sinkhorn scalings per proximal step
  double marginal_tol = 1e-6;  // used only to set TransportPlan::converged

  void validate() const;
};

struct TransportPlan {
  Matrix values;
  std::vector<double> row_marginal;
  std::vector<double> col_marginal;
  int iterations = 0;
  bool converged = false;

  double row_residual() const;  // ||T 1 - mu||_inf
  double col_residual() const;  // ||T^T 1 - nu||_inf
};

// D_ij = 1 - <z_i, c_j>. Features are N x d with unit rows, the codebook is
// d x K with unit columns; deviation beyond 1e-6 raises ContractError.
CostMatrix cosine_cost(const Matrix& features, const Matrix& codebook);
// Differentiable form used by the codebook loss; same contract.
ad::Tensor cosine_cost(const ad::Tensor& features, const ad::Tensor& codebook);

// Inexact proximal point OT: T <- diag(delta) (exp(-D/eps) .* T) diag(sigma),
// starting from the all-ones plan. mu and nu must be positive and sum to 1.
TransportPlan ipot(const CostMatrix& cost, std::span<const double> mu, std::span<const double> nu,
                   const IpotConfig& cfg);
// Uniform marginals 1/N, 1/K.
TransportPlan ipot(const CostMatrix& cost, const IpotConfig& cfg);

// <T, D> = sum_ij T_ij D_ij.
double ot_objective(const TransportPlan& plan, const CostMatrix& cost);
// The plan is a constant; gradient flows into `cost` only.
ad::Tensor ot_objective(const TransportPlan& plan, const ad::Tensor& cost);

std::vector<double> uniform_marginal(std::size_t n);

}  // namespace protoalign::ot
