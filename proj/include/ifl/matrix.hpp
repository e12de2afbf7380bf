#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

#include "ifl/errors.hpp"

namespace ifl {

// Dense row-major matrix of 64-bit reals. The universal carrier for weights,
// bases and batches; invariant: data length = rows * cols, entries finite.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(
      std::initializer_list<std::initializer_list<double>> rows);
  static Matrix column(const std::vector<double>& values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) {
    return data_[i * cols_ + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
  const double* row_ptr(std::size_t i) const {
    return data_.data() + i * cols_;
  }

  Matrix transposed() const;

  // Columns gathered in the given order (used for minibatch slicing).
  Matrix gather_cols(const std::vector<std::size_t>& indices) const;
  Matrix col(std::size_t j) const;
  void set_col(std::size_t j, const Matrix& column);

  // Appends the columns of other (same row count) to the right.
  void append_cols(const Matrix& other);

  double frobenius_norm() const;
  double squared_frobenius_norm() const;
  double max_abs() const;
  bool all_finite() const;
  void require_finite(const char* what) const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double scale);

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator*(const Matrix& a, const Matrix& b);
Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double scale, Matrix a);

// a^T * b without materializing the transpose.
Matrix transpose_times(const Matrix& a, const Matrix& b);
// a * b^T without materializing the transpose.
Matrix times_transpose(const Matrix& a, const Matrix& b);

double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace ifl
