#include <algorithm>
#include <cmath>
#include <string>

#include "protoalign/autodiff.hpp"
#include "protoalign/error.hpp"

namespace protoalign::ad {

namespace {

std::string shape_str(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!a.value().same_shape(b.value()))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.value()) + " vs " +
                     shape_str(b.value()));
}

// Gradient buffer of input i, or nullptr when that input is constant.
Matrix* input_grad(Node& n, std::size_t i) {
  Node& in = *n.inputs[i];
  return in.requires_grad ? &in.grad : nullptr;
}

const Matrix& input_value(Node& n, std::size_t i) { return n.inputs[i]->value; }

void check_temperature(const char* op, double t) {
  if (!(t > 0.0) || !std::isfinite(t))
    throw DomainError(std::string(op) + ": temperature must be positive and finite, got " +
                      std::to_string(t));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  Matrix out = protoalign::matmul(a.value(), b.value());
  return Tensor::make(std::move(out), {a, b}, [](Node& n) {
    const Matrix& av = input_value(n, 0);
    const Matrix& bv = input_value(n, 1);
    if (Matrix* ga = input_grad(n, 0)) {
      Matrix d = matmul_transposed_b(n.grad, bv);
      for (std::size_t i = 0; i < d.size(); ++i) ga->data()[i] += d.data()[i];
    }
    if (Matrix* gb = input_grad(n, 1)) {
      Matrix d = protoalign::matmul(av.transposed(), n.grad);
      for (std::size_t i = 0; i < d.size(); ++i) gb->data()[i] += d.data()[i];
    }
  });
}

Tensor transpose(const Tensor& a) {
  return Tensor::make(a.value().transposed(), {a}, [](Node& n) {
    Matrix* ga = input_grad(n, 0);
    for (std::size_t i = 0; i < n.grad.rows(); ++i)
      for (std::size_t j = 0; j < n.grad.cols(); ++j) (*ga)(j, i) += n.grad(i, j);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.value().data()[i];
  return Tensor::make(std::move(out), {a, b}, [](Node& n) {
    for (std::size_t k = 0; k < 2; ++k)
      if (Matrix* g = input_grad(n, k))
        for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] += n.grad.data()[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.value().data()[i];
  return Tensor::make(std::move(out), {a, b}, [](Node& n) {
    if (Matrix* g = input_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] += n.grad.data()[i];
    if (Matrix* g = input_grad(n, 1))
      for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] -= n.grad.data()[i];
  });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  require_same_shape("hadamard", a, b);
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.value().data()[i];
  return Tensor::make(std::move(out), {a, b}, [](Node& n) {
    const Matrix& av = input_value(n, 0);
    const Matrix& bv = input_value(n, 1);
    if (Matrix* g = input_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] += n.grad.data()[i] * bv.data()[i];
    if (Matrix* g = input_grad(n, 1))
      for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] += n.grad.data()[i] * av.data()[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  Matrix out = a.value();
  for (double& v : out.data()) v *= s;
  return Tensor::make(std::move(out), {a}, [s](Node& n) {
    Matrix* g = input_grad(n, 0);
    for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] += n.grad.data()[i] * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  Matrix out = a.value();
  for (double& v : out.data()) v += s;
  return Tensor::make(std::move(out), {a}, [](Node& n) {
    Matrix* g = input_grad(n, 0);
    for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] += n.grad.data()[i];
  });
}

Tensor add_row_bias(const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols())
    throw ShapeError("add_row_bias: bias " + shape_str(bias.value()) + " for input " +
                     shape_str(a.value()));
  Matrix out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    for (std::size_t j = 0; j < out.cols(); ++j) r[j] += bias.value()(0, j);
  }
  return Tensor::make(std::move(out), {a, bias}, [](Node& n) {
    if (Matrix* g = input_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] += n.grad.data()[i];
    if (Matrix* g = input_grad(n, 1))
      for (std::size_t i = 0; i < n.grad.rows(); ++i)
        for (std::size_t j = 0; j < n.grad.cols(); ++j) (*g)(0, j) += n.grad(i, j);
  });
}

Tensor divide_by_scalar(const Tensor& a, const Tensor& s) {
  if (s.rows() != 1 || s.cols() != 1) throw ShapeError("divide_by_scalar: divisor must be 1x1");
  const double sv = s.item();
  if (sv == 0.0) throw DomainError("divide_by_scalar: division by zero");
  Matrix out = a.value();
  for (double& v : out.data()) v /= sv;
  return Tensor::make(std::move(out), {a, s}, [](Node& n) {
    const Matrix& av = input_value(n, 0);
    const double sv = input_value(n, 1)(0, 0);
    if (Matrix* g = input_grad(n, 0))
      for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] += n.grad.data()[i] / sv;
    if (Matrix* g = input_grad(n, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < av.size(); ++i) acc += n.grad.data()[i] * av.data()[i];
      (*g)(0, 0) -= acc / (sv * sv);
    }
  });
}

Tensor tanh(const Tensor& a) {
  Matrix out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  return Tensor::make(std::move(out), {a}, [](Node& n) {
    Matrix* g = input_grad(n, 0);
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double y = n.value.data()[i];
      g->data()[i] += n.grad.data()[i] * (1.0 - y * y);
    }
  });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  Matrix out = a.value();
  for (double& v : out.data()) v = std::clamp(v, lo, hi);
  return Tensor::make(std::move(out), {a}, [lo, hi](Node& n) {
    const Matrix& av = input_value(n, 0);
    Matrix* g = input_grad(n, 0);
    for (std::size_t i = 0; i < g->size(); ++i) {
      const double x = av.data()[i];
      if (x >= lo && x <= hi) g->data()[i] += n.grad.data()[i];
    }
  });
}

Tensor sum(const Tensor& a) {
  return Tensor::make(Matrix(1, 1, a.value().sum()), {a}, [](Node& n) {
    Matrix* g = input_grad(n, 0);
    const double d = n.grad(0, 0);
    for (double& v : g->data()) v += d;
  });
}

Tensor mean(const Tensor& a) {
  const double count = static_cast<double>(a.value().size());
  return Tensor::make(Matrix(1, 1, a.value().sum() / count), {a}, [count](Node& n) {
    Matrix* g = input_grad(n, 0);
    const double d = n.grad(0, 0) / count;
    for (double& v : g->data()) v += d;
  });
}

Tensor weighted_sum(std::span<const Tensor> terms, std::span<const double> weights) {
  if (terms.size() != weights.size()) throw ShapeError("weighted_sum: term/weight count mismatch");
  double total = 0.0;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    if (terms[k].rows() != 1 || terms[k].cols() != 1) throw ShapeError("weighted_sum: non-scalar term");
    total += weights[k] * terms[k].item();
  }
  std::vector<double> w(weights.begin(), weights.end());
  return Tensor::make(Matrix(1, 1, total), std::vector<Tensor>(terms.begin(), terms.end()),
                      [w = std::move(w)](Node& n) {
                        for (std::size_t k = 0; k < w.size(); ++k)
                          if (Matrix* g = input_grad(n, k)) (*g)(0, 0) += w[k] * n.grad(0, 0);
                      });
}

Tensor row_softmax(const Tensor& x, double temperature) {
  check_temperature("row_softmax", temperature);
  Matrix out = x.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double& v : r) {
      v = std::exp((v - m) / temperature);
      z += v;
    }
    for (double& v : r) v /= z;
  }
  return Tensor::make(std::move(out), {x}, [temperature](Node& n) {
    Matrix* g = input_grad(n, 0);
    for (std::size_t i = 0; i < n.value.rows(); ++i) {
      auto y = n.value.row(i);
      auto gy = n.grad.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < y.size(); ++j) dot += gy[j] * y[j];
      auto gx = g->row(i);
      for (std::size_t j = 0; j < y.size(); ++j) gx[j] += (gy[j] - dot) * y[j] / temperature;
    }
  });
}

Tensor row_softmax(const Tensor& x, const Tensor& temperature) {
  check_temperature("row_softmax", temperature.item());
  return row_softmax(divide_by_scalar(x, temperature), 1.0);
}

Tensor log_row_softmax(const Tensor& x) {
  Matrix out = x.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.row(i);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double v : r) z += std::exp(v - m);
    const double lse = m + std::log(z);
    for (double& v : r) v -= lse;
  }
  return Tensor::make(std::move(out), {x}, [](Node& n) {
    Matrix* g = input_grad(n, 0);
    for (std::size_t i = 0; i < n.value.rows(); ++i) {
      auto ly = n.value.row(i);
      auto gy = n.grad.row(i);
      double gsum = 0.0;
      for (double v : gy) gsum += v;
      auto gx = g->row(i);
      for (std::size_t j = 0; j < ly.size(); ++j) gx[j] += gy[j] - std::exp(ly[j]) * gsum;
    }
  });
}

Tensor l2_normalize_rows(const Tensor& x) {
  const Matrix& xv = x.value();
  Matrix out = xv;
  std::vector<double> norms(xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double n2 = 0.0;
    for (double v : xv.row(i)) n2 += v * v;
    if (!std::isfinite(n2))
      throw NumericalError("l2_normalize_rows: row " + std::to_string(i) + " has a non-finite norm");
    if (!(n2 > 0.0)) throw DomainError("l2_normalize_rows: row " + std::to_string(i) + " has zero norm");
    norms[i] = std::sqrt(n2);
    for (double& v : out.row(i)) v /= norms[i];
  }
  return Tensor::make(std::move(out), {x}, [norms = std::move(norms)](Node& n) {
    Matrix* g = input_grad(n, 0);
    for (std::size_t i = 0; i < n.value.rows(); ++i) {
      auto y = n.value.row(i);
      auto gy = n.grad.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < y.size(); ++j) dot += gy[j] * y[j];
      auto gx = g->row(i);
      for (std::size_t j = 0; j < y.size(); ++j) gx[j] += (gy[j] - y[j] * dot) / norms[i];
    }
  });
}

namespace {
Tensor cross_entropy_from_scaled(const Tensor& scaled_logits, const Matrix& target) {
  const double rows = static_cast<double>(scaled_logits.rows());
  return scale(frobenius(target, log_row_softmax(scaled_logits)), -1.0 / rows);
}
}  // namespace

Tensor soft_cross_entropy(const Tensor& logits, const Matrix& target, double temperature) {
  check_temperature("soft_cross_entropy", temperature);
  if (!logits.value().same_shape(target))
    throw ShapeError("soft_cross_entropy: logits " + shape_str(logits.value()) + " vs target " +
                     shape_str(target));
  return cross_entropy_from_scaled(scale(logits, 1.0 / temperature), target);
}

Tensor soft_cross_entropy(const Tensor& logits, const Matrix& target, const Tensor& temperature) {
  check_temperature("soft_cross_entropy", temperature.item());
  if (!logits.value().same_shape(target))
    throw ShapeError("soft_cross_entropy: logits " + shape_str(logits.value()) + " vs target " +
                     shape_str(target));
  return cross_entropy_from_scaled(divide_by_scalar(logits, temperature), target);
}

Tensor frobenius(const Matrix& constant, const Tensor& x) {
  if (!constant.same_shape(x.value()))
    throw ShapeError("frobenius: " + shape_str(constant) + " vs " + shape_str(x.value()));
  double s = 0.0;
  for (std::size_t i = 0; i < constant.size(); ++i) s += constant.data()[i] * x.value().data()[i];
  return Tensor::make(Matrix(1, 1, s), {x}, [c = constant](Node& n) {
    Matrix* g = input_grad(n, 0);
    const double d = n.grad(0, 0);
    for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] += d * c.data()[i];
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw ShapeError("concat_cols: row counts differ");
  const std::size_t ca = a.cols();
  Matrix out(a.rows(), ca + b.cols());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    std::copy(a.value().row(i).begin(), a.value().row(i).end(), out.row(i).begin());
    std::copy(b.value().row(i).begin(), b.value().row(i).end(), out.row(i).begin() + ca);
  }
  return Tensor::make(std::move(out), {a, b}, [ca](Node& n) {
    for (std::size_t i = 0; i < n.grad.rows(); ++i) {
      auto gr = n.grad.row(i);
      if (Matrix* g = input_grad(n, 0))
        for (std::size_t j = 0; j < ca; ++j) (*g)(i, j) += gr[j];
      if (Matrix* g = input_grad(n, 1))
        for (std::size_t j = ca; j < gr.size(); ++j) (*g)(i, j - ca) += gr[j];
    }
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw ShapeError("concat_rows: column counts differ");
  std::vector<double> data(a.value().data().begin(), a.value().data().end());
  data.insert(data.end(), b.value().data().begin(), b.value().data().end());
  const std::size_t na = a.value().size();
  return Tensor::make(Matrix(a.rows() + b.rows(), a.cols(), std::move(data)), {a, b}, [na](Node& n) {
    if (Matrix* g = input_grad(n, 0))
      for (std::size_t i = 0; i < na; ++i) g->data()[i] += n.grad.data()[i];
    if (Matrix* g = input_grad(n, 1))
      for (std::size_t i = 0; i < g->size(); ++i) g->data()[i] += n.grad.data()[na + i];
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), a.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= a.rows())
      throw ShapeError("gather_rows: index " + std::to_string(indices[r]) + " out of range for " +
                       std::to_string(a.rows()) + " rows");
    auto src = a.value().row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return Tensor::make(std::move(out), {a}, [idx = std::move(idx)](Node& n) {
    Matrix* g = input_grad(n, 0);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto src = n.grad.row(r);
      auto dst = g->row(idx[r]);
      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
    }
  });
}

Tensor row_dot(const Tensor& a, const Tensor& b) {
  require_same_shape("row_dot", a, b);
  Matrix out(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    auto ar = a.value().row(i);
    auto br = b.value().row(i);
    for (std::size_t j = 0; j < ar.size(); ++j) s += ar[j] * br[j];
    out(i, 0) = s;
  }
  return Tensor::make(std::move(out), {a, b}, [](Node& n) {
    const Matrix& av = input_value(n, 0);
    const Matrix& bv = input_value(n, 1);
    for (std::size_t i = 0; i < av.rows(); ++i) {
      const double d = n.grad(i, 0);
      if (Matrix* g = input_grad(n, 0))
        for (std::size_t j = 0; j < av.cols(); ++j) (*g)(i, j) += d * bv(i, j);
      if (Matrix* g = input_grad(n, 1))
        for (std::size_t j = 0; j < av.cols(); ++j) (*g)(i, j) += d * av(i, j);
    }
  });
}

}  // namespace protoalign::ad
