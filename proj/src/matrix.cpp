#include "ifl/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ifl {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch (" +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Matrix: data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(rows_) + "x" +
                     std::to_string(cols_));
  }
  require_finite("Matrix");
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(
    std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  Matrix m(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("from_rows: ragged rows");
    std::size_t j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  m.require_finite("from_rows");
  return m;
}

Matrix Matrix::column(const std::vector<double>& values) {
  Matrix m(values.size(), 1);
  for (std::size_t i = 0; i < values.size(); ++i) m(i, 0) = values[i];
  m.require_finite("column");
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i) {
    const double* src = row_ptr(i);
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = src[j];
  }
  return t;
}

Matrix Matrix::gather_cols(const std::vector<std::size_t>& indices) const {
  Matrix out(rows_, indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const std::size_t src = indices[j];
    if (src >= cols_) throw ShapeError("gather_cols: index out of range");
    for (std::size_t i = 0; i < rows_; ++i) out(i, j) = (*this)(i, src);
  }
  return out;
}

Matrix Matrix::col(std::size_t j) const {
  if (j >= cols_) throw ShapeError("col: index out of range");
  Matrix out(rows_, 1);
  for (std::size_t i = 0; i < rows_; ++i) out(i, 0) = (*this)(i, j);
  return out;
}

void Matrix::set_col(std::size_t j, const Matrix& column) {
  if (j >= cols_ || column.rows() != rows_ || column.cols() != 1) {
    throw ShapeError("set_col: shape mismatch");
  }
  for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = column(i, 0);
}

void Matrix::append_cols(const Matrix& other) {
  if (other.cols() == 0) return;
  if (cols_ == 0 && rows_ == 0) {
    *this = other;
    return;
  }
  if (other.rows() != rows_) throw ShapeError("append_cols: row mismatch");
  Matrix out(rows_, cols_ + other.cols());
  for (std::size_t i = 0; i < rows_; ++i) {
    double* dst = out.row_ptr(i);
    const double* a = row_ptr(i);
    const double* b = other.row_ptr(i);
    std::copy(a, a + cols_, dst);
    std::copy(b, b + other.cols(), dst + cols_);
  }
  *this = std::move(out);
}

double Matrix::frobenius_norm() const {
  return std::sqrt(squared_frobenius_norm());
}

double Matrix::squared_frobenius_norm() const {
  double sum = 0.0;
  for (double v : data_) sum += v * v;
  return sum;
}

double Matrix::max_abs() const {
  double m = 0.0;
  for (double v : data_) m = std::max(m, std::abs(v));
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Matrix::require_finite(const char* what) const {
  if (!all_finite()) {
    throw InvalidInput(std::string(what) + ": non-finite entry");
  }
}

Matrix& Matrix::operator+=(const Matrix& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= other.data_[k];
  return *this;
}

Matrix& Matrix::operator*=(double scale) {
  for (double& v : data_) v *= scale;
  return *this;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("operator*: inner dimensions " + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()));
  }
  Matrix c(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row_ptr(i);
    const double* ai = a.row_ptr(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = ai[k];
      if (aik == 0.0) continue;
      const double* bk = b.row_ptr(k);
      for (std::size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix operator+(Matrix a, const Matrix& b) {
  a += b;
  return a;
}

Matrix operator-(Matrix a, const Matrix& b) {
  a -= b;
  return a;
}

Matrix operator*(double scale, Matrix a) {
  a *= scale;
  return a;
}

Matrix transpose_times(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("transpose_times: row counts " + std::to_string(a.rows()) +
                     " vs " + std::to_string(b.rows()));
  }
  Matrix c(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* ak = a.row_ptr(k);
    const double* bk = b.row_ptr(k);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = ak[i];
      if (aki == 0.0) continue;
      double* ci = c.row_ptr(i);
      for (std::size_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix times_transpose(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("times_transpose: col counts " + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.cols()));
  }
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ai = a.row_ptr(i);
    double* ci = c.row_ptr(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* bj = b.row_ptr(j);
      double sum = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) sum += ai[k] * bj[k];
      ci[j] = sum;
    }
  }
  return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) {
      m = std::max(m, std::abs(a(i, j) - b(i, j)));
    }
  }
  return m;
}

}  // namespace ifl
