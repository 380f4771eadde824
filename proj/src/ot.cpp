#include "protoalign/ot.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "protoalign/error.hpp"

namespace protoalign::ot {

namespace {

constexpr double kUnitTol = 1e-6;

void check_probability_vector(const char* name, std::span<const double> p, std::size_t expected) {
  if (p.size() != expected)
    throw ShapeError(std::string("ipot: ") + name + " has length " + std::to_string(p.size()) +
                     ", expected " + std::to_string(expected));
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(p[i] > 0.0) || !std::isfinite(p[i]))
      throw DomainError(std::string("ipot: ") + name + "[" + std::to_string(i) + "] must be positive");
    total += p[i];
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw DomainError(std::string("ipot: ") + name + " sums to " + std::to_string(total) + ", not 1");
}

[[noreturn]] void degenerate(const char* what, std::size_t index, double epsilon, int iter) {
  std::ostringstream os;
  os << "ipot: " << what << " " << index << " of the proximal kernel vanished at outer iteration "
     << iter << " (epsilon=" << epsilon << "); the cost scale is too large for this epsilon";
  throw SolverError(os.str());
}

}  // namespace

CostMatrix::CostMatrix(Matrix values) : values_(std::move(values)) {
  for (std::size_t i = 0; i < values_.rows(); ++i)
    for (std::size_t j = 0; j < values_.cols(); ++j) {
      const double v = values_(i, j);
      if (!std::isfinite(v) || v < -1e-12)
        throw DomainError("CostMatrix: entry (" + std::to_string(i) + "," + std::to_string(j) +
                          ") is negative or non-finite");
    }
}

void IpotConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw DomainError("IpotConfig: epsilon must be > 0");
  if (outer_iters < 1 || inner_iters < 1) throw DomainError("IpotConfig: iteration counts must be >= 1");
  if (!(marginal_tol > 0.0)) throw DomainError("IpotConfig: marginal_tol must be > 0");
}

double TransportPlan::row_residual() const {
  const auto rs = row_sums(values);
  double r = 0.0;
  for (std::size_t i = 0; i < rs.size(); ++i) r = std::max(r, std::abs(rs[i] - row_marginal[i]));
  return r;
}

double TransportPlan::col_residual() const {
  const auto cs = col_sums(values);
  double r = 0.0;
  for (std::size_t j = 0; j < cs.size(); ++j) r = std::max(r, std::abs(cs[j] - col_marginal[j]));
  return r;
}

std::vector<double> uniform_marginal(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

static void check_unit_rows(const char* what, const Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double n2 = 0.0;
    for (double v : m.row(i)) n2 += v * v;
    if (std::abs(std::sqrt(n2) - 1.0) > kUnitTol)
      throw ContractError(std::string("cosine_cost: ") + what + " " + std::to_string(i) +
                          " is not unit-normalized (norm " + std::to_string(std::sqrt(n2)) + ")");
  }
}

CostMatrix cosine_cost(const Matrix& features, const Matrix& codebook) {
  if (features.cols() != codebook.rows())
    throw ShapeError("cosine_cost: feature dim " + std::to_string(features.cols()) +
                     " vs codebook dim " + std::to_string(codebook.rows()));
  check_unit_rows("feature row", features);
  check_unit_rows("prototype column", codebook.transposed());
  Matrix d = matmul(features, codebook);
  // Norms may deviate by up to 1e-6, so 1 - cos can dip just below zero.
  for (double& v : d.data()) v = std::max(0.0, 1.0 - v);
  return CostMatrix(std::move(d));
}

ad::Tensor cosine_cost(const ad::Tensor& features, const ad::Tensor& codebook) {
  if (features.cols() != codebook.rows())
    throw ShapeError("cosine_cost: feature dim " + std::to_string(features.cols()) +
                     " vs codebook dim " + std::to_string(codebook.rows()));
  check_unit_rows("feature row", features.value());
  check_unit_rows("prototype column", codebook.value().transposed());
  return ad::add_scalar(ad::scale(ad::matmul(features, codebook), -1.0), 1.0);
}

TransportPlan ipot(const CostMatrix& cost, std::span<const double> mu, std::span<const double> nu,
                   const IpotConfig& cfg) {
  cfg.validate();
  const std::size_t n = cost.rows();
  const std::size_t k = cost.cols();
  if (n == 0 || k == 0) throw ShapeError("ipot: empty cost matrix");
  check_probability_vector("mu", mu, n);
  check_probability_vector("nu", nu, k);

  Matrix kernel(n, k);
  for (std::size_t i = 0; i < n * k; ++i)
    kernel.data()[i] = std::exp(-cost.values().data()[i] / cfg.epsilon);

  Matrix plan(n, k, 1.0);
  Matrix q(n, k);
  std::vector<double> delta(n, 1.0);
  std::vector<double> sigma(k, 1.0 / static_cast<double>(k));

  for (int t = 1; t <= cfg.outer_iters; ++t) {
    for (std::size_t i = 0; i < n * k; ++i) q.data()[i] = kernel.data()[i] * plan.data()[i];

    for (int inner = 0; inner < cfg.inner_iters; ++inner) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        auto qr = q.row(i);
        for (std::size_t j = 0; j < k; ++j) s += qr[j] * sigma[j];
        if (!(s > 0.0) || !std::isfinite(s)) degenerate("row", i, cfg.epsilon, t);
        delta[i] = mu[i] / s;
      }
      for (std::size_t j = 0; j < k; ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += q(i, j) * delta[i];
        if (!(s > 0.0) || !std::isfinite(s)) degenerate("column", j, cfg.epsilon, t);
        sigma[j] = nu[j] / s;
      }
    }

    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) plan(i, j) = delta[i] * q(i, j) * sigma[j];
  }

  TransportPlan out{std::move(plan), {mu.begin(), mu.end()}, {nu.begin(), nu.end()}, cfg.outer_iters,
                    false};
  if (!out.values.all_finite()) throw SolverError("ipot: non-finite plan entries (epsilon=" +
                                                  std::to_string(cfg.epsilon) + ")");
  out.converged = out.row_residual() <= cfg.marginal_tol && out.col_residual() <= cfg.marginal_tol;
  return out;
}

TransportPlan ipot(const CostMatrix& cost, const IpotConfig& cfg) {
  const auto mu = uniform_marginal(cost.rows());
  const auto nu = uniform_marginal(cost.cols());
  return ipot(cost, mu, nu, cfg);
}

double ot_objective(const TransportPlan& plan, const CostMatrix& cost) {
  if (!plan.values.same_shape(cost.values())) throw ShapeError("ot_objective: plan/cost shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < plan.values.size(); ++i) s += plan.values.data()[i] * cost.values().data()[i];
  return s;
}

ad::Tensor ot_objective(const TransportPlan& plan, const ad::Tensor& cost) {
  if (!plan.values.same_shape(cost.value())) throw ShapeError("ot_objective: plan/cost shape mismatch");
  return ad::frobenius(plan.values, cost);
}

}  // namespace protoalign::ot
