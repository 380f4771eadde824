#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "protoalign/autodiff.hpp"
#include "protoalign/matrix.hpp"

namespace testing_support {

using protoalign::Matrix;
namespace ad = protoalign::ad;

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                            double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (auto& v : m.data()) v = u(rng);
  return m;
}

inline Matrix random_unit_rows(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      m(i, j) = g(rng);
      n2 += m(i, j) * m(i, j);
    }
    for (std::size_t j = 0; j < c; ++j) m(i, j) /= std::sqrt(n2);
  }
  return m;
}

inline Matrix random_row_stochastic(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  Matrix m = random_matrix(r, c, rng, 0.01, 1.0);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += m(i, j);
    for (std::size_t j = 0; j < c; ++j) m(i, j) /= s;
  }
  return m;
}

constexpr double kFdStep = 1e-5;
constexpr double kFdRelTol = 1e-4;

// Largest relative disagreement between backward() and central differences
// over every entry of every parameter. Denominators are floored at 1e-5 so
// entries whose true gradient is ~0 are compared on an absolute scale.
inline double max_fd_error(const std::vector<ad::Tensor*>& params, const std::function<ad::Tensor()>& loss) {
  for (auto* p : params) p->zero_grad();
  ad::backward(loss());
  std::vector<Matrix> analytic;
  for (auto* p : params) analytic.push_back(p->grad());

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& w = params[k]->mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w.data()[i];
      w.data()[i] = keep + kFdStep;
      const double up = loss().item();
      w.data()[i] = keep - kFdStep;
      const double down = loss().item();
      w.data()[i] = keep;
      const double numeric = (up - down) / (2.0 * kFdStep);
      const double a = analytic[k].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-5});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

// Exact optimum of min <T, D> over T >= 0 with row sums 1/N and column sums
// 1/K. Scaling the marginals by N*K gives integer supplies K (rows) and
// demands N (columns); successive shortest paths on that integral network
// terminates at an exact optimal vertex.
inline double exact_uniform_ot(const Matrix& d) {
  const std::size_t n = d.rows(), k = d.cols();
  const std::size_t src = n + k, sink = n + k + 1, nodes = n + k + 2;
  struct Edge {
    std::size_t to;
    long long cap;
    double cost;
  };
  std::vector<Edge> edges;
  std::vector<std::vector<std::size_t>> adj(nodes);
  auto add = [&](std::size_t a, std::size_t b, long long cap, double cost) {
    adj[a].push_back(edges.size());
    edges.push_back({b, cap, cost});
    adj[b].push_back(edges.size());
    edges.push_back({a, 0, -cost});
  };
  for (std::size_t i = 0; i < n; ++i) add(src, i, static_cast<long long>(k), 0.0);
  for (std::size_t j = 0; j < k; ++j) add(n + j, sink, static_cast<long long>(n), 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) add(i, n + j, static_cast<long long>(n * k), d(i, j));

  long long remaining = static_cast<long long>(n * k);
  double total = 0.0;
  while (remaining > 0) {
    // Bellman-Ford: the residual graph has negative-cost back edges.
    std::vector<double> dist(nodes, std::numeric_limits<double>::infinity());
    std::vector<std::size_t> via(nodes, edges.size());
    dist[src] = 0.0;
    for (std::size_t round = 0; round < nodes; ++round) {
      bool changed = false;
      for (std::size_t u = 0; u < nodes; ++u) {
        if (!std::isfinite(dist[u])) continue;
        for (std::size_t e : adj[u]) {
          if (edges[e].cap <= 0) continue;
          const double nd = dist[u] + edges[e].cost;
          if (nd < dist[edges[e].to] - 1e-15) {
            dist[edges[e].to] = nd;
            via[edges[e].to] = e;
            changed = true;
          }
        }
      }
      if (!changed) break;
    }
    long long push = remaining;
    for (std::size_t v = sink; v != src; v = edges[via[v] ^ 1].to) push = std::min(push, edges[via[v]].cap);
    for (std::size_t v = sink; v != src; v = edges[via[v] ^ 1].to) {
      edges[via[v]].cap -= push;
      edges[via[v] ^ 1].cap += push;
    }
    total += static_cast<double>(push) * dist[sink];
    remaining -= push;
  }
  return total / static_cast<double>(n * k);
}

}  // namespace testing_support
