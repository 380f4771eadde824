#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace protoalign {

// Row-major dense matrix of doubles. Plain value type; gradient bookkeeping
// lives in ad::Tensor.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix zeros_like(const Matrix& other) { return Matrix(other.rows_, other.cols_); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void fill(double v);
  Matrix transposed() const;
  double sum() const;
  bool all_finite() const;

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Plain (non-recording) helpers used by solvers and evaluation code.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_transposed_b(const Matrix& a, const Matrix& b);  // a * b^T
std::vector<double> row_sums(const Matrix& m);
std::vector<double> col_sums(const Matrix& m);
Matrix normalize_rows(const Matrix& m);
Matrix normalize_cols(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace protoalign
