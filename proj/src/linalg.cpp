#include "ifl/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace ifl {

namespace {

constexpr int kMaxJacobiSweeps = 100;
constexpr double kJacobiTolerance = 1e-14;

double col_dot(const Matrix& m, std::size_t p, std::size_t q) {
  double sum = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) sum += m(i, p) * m(i, q);
  return sum;
}

void rotate_cols(Matrix& m, std::size_t p, std::size_t q, double c, double s) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double mp = m(i, p);
    const double mq = m(i, q);
    m(i, p) = c * mp - s * mq;
    m(i, q) = s * mp + c * mq;
  }
}

// One-sided Jacobi on a tall-or-square matrix (rows >= cols): orthogonalizes
// the columns of `work` in place while accumulating rotations into `v`.
void one_sided_jacobi(Matrix& work, Matrix& v) {
  const std::size_t n = work.cols();
  bool converged = false;
  for (int sweep = 0; sweep < kMaxJacobiSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = col_dot(work, p, p);
        const double beta = col_dot(work, q, q);
        const double gamma = col_dot(work, p, q);
        if (std::abs(gamma) <= kJacobiTolerance * std::sqrt(alpha * beta) ||
            gamma == 0.0) {
          continue;
        }
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        double t;
        if (std::abs(zeta) > 1e150) {
          t = 1.0 / (2.0 * zeta);
        } else {
          const double sign = zeta >= 0.0 ? 1.0 : -1.0;
          t = sign / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        }
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate_cols(work, p, q, c, s);
        rotate_cols(v, p, q, c, s);
      }
    }
  }
  if (!converged) {
    throw NumericalFailure("svd: Jacobi sweeps did not converge within " +
                           std::to_string(kMaxJacobiSweeps) + " sweeps");
  }
}

// SVD of a tall-or-square matrix. u: m x n, s: n, vt: n x n.
SvdResult svd_tall(const Matrix& a) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Matrix work = a;
  Matrix v = Matrix::identity(n);
  one_sided_jacobi(work, v);

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = std::sqrt(col_dot(work, j, j));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return norms[x] > norms[y];
  });

  SvdResult result;
  result.s.resize(n);
  result.u = Matrix(m, n);
  result.vt = Matrix(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    result.s[j] = norms[src];
    for (std::size_t i = 0; i < n; ++i) result.vt(j, i) = v(i, src);
  }

  // Columns whose norm is at machine-noise level cannot be normalized; their
  // left vectors are filled by orthonormal completion afterwards.
  const double smax = result.s.empty() ? 0.0 : result.s[0];
  const double machine_zero = static_cast<double>(std::max(m, n)) *
                              std::numeric_limits<double>::epsilon() * smax;
  Matrix good(m, 0);
  std::vector<std::size_t> degenerate;
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t src = order[j];
    if (result.s[j] > machine_zero && result.s[j] > 0.0) {
      Matrix column(m, 1);
      const double inv = 1.0 / result.s[j];
      for (std::size_t i = 0; i < m; ++i) column(i, 0) = work(i, src) * inv;
      for (std::size_t i = 0; i < m; ++i) result.u(i, j) = column(i, 0);
      good.append_cols(column);
    } else {
      degenerate.push_back(j);
    }
  }
  if (!degenerate.empty()) {
    const Matrix completed = complete_orthonormal(good, good.cols() + degenerate.size());
    for (std::size_t k = 0; k < degenerate.size(); ++k) {
      const std::size_t j = degenerate[k];
      for (std::size_t i = 0; i < m; ++i) {
        result.u(i, j) = completed(i, good.cols() + k);
      }
    }
  }
  return result;
}

void apply_sign_convention(SvdResult& r) {
  const std::size_t count = r.s.size();
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t best = 0;
    double best_abs = -1.0;
    for (std::size_t j = 0; j < r.vt.cols(); ++j) {
      const double a = std::abs(r.vt(i, j));
      if (a > best_abs) {
        best_abs = a;
        best = j;
      }
    }
    if (r.vt(i, best) < 0.0) {
      for (std::size_t j = 0; j < r.vt.cols(); ++j) r.vt(i, j) = -r.vt(i, j);
      for (std::size_t k = 0; k < r.u.rows(); ++k) r.u(k, i) = -r.u(k, i);
    }
  }
}

void require_orthonormal_cols(const Matrix& basis, const char* what) {
  if (orthonormal_defect(basis) > kOrthonormalTolerance) {
    throw InvalidInput(std::string(what) + ": basis columns not orthonormal");
  }
}

}  // namespace

double SvdResult::rank_tolerance() const {
  const double smax = s.empty() ? 0.0 : s[0];
  return 1e-10 * static_cast<double>(std::max(u.rows(), vt.cols())) * smax;
}

std::size_t SvdResult::rank() const {
  const double tol = rank_tolerance();
  std::size_t r = 0;
  for (double value : s) {
    if (value > tol) ++r;
  }
  return r;
}

Matrix SvdResult::reconstruct() const {
  Matrix scaled = u;
  for (std::size_t j = 0; j < s.size(); ++j) {
    for (std::size_t i = 0; i < scaled.rows(); ++i) scaled(i, j) *= s[j];
  }
  return scaled * vt;
}

SvdResult svd(const Matrix& a) {
  if (a.rows() == 0 || a.cols() == 0) {
    throw InvalidInput("svd: matrix must be non-empty");
  }
  a.require_finite("svd");
  SvdResult result;
  if (a.rows() >= a.cols()) {
    result = svd_tall(a);
  } else {
    SvdResult t = svd_tall(a.transposed());
    result.u = t.vt.transposed();
    result.s = std::move(t.s);
    result.vt = t.u.transposed();
  }
  apply_sign_convention(result);
  return result;
}

Matrix project_out(const Matrix& basis, const Matrix& x) {
  if (basis.cols() == 0) return x;
  if (basis.rows() != x.rows()) {
    throw ShapeError("project_out: basis rows " + std::to_string(basis.rows()) +
                     " vs x rows " + std::to_string(x.rows()));
  }
  require_orthonormal_cols(basis, "project_out");
  return x - basis * transpose_times(basis, x);
}

Matrix project_in(const Matrix& basis, const Matrix& x) {
  if (basis.cols() == 0) return Matrix(x.rows(), x.cols());
  if (basis.rows() != x.rows()) {
    throw ShapeError("project_in: basis rows " + std::to_string(basis.rows()) +
                     " vs x rows " + std::to_string(x.rows()));
  }
  require_orthonormal_cols(basis, "project_in");
  return basis * transpose_times(basis, x);
}

Matrix orthonormal_complement(const Matrix& basis) {
  const std::size_t dim = basis.rows();
  if (basis.cols() > dim) {
    throw InvalidInput("orthonormal_complement: more columns than rows");
  }
  if (basis.cols() == 0) return complete_orthonormal(Matrix(dim, 0), dim);
  require_orthonormal_cols(basis, "orthonormal_complement");

  // The singular values of an orthonormal basis are all one, so the left
  // vectors paired with (numerically) zero singular values are exactly the
  // completion of the rank-many columns of u.
  const SvdResult decomposition = svd(basis);
  const std::size_t rank = decomposition.rank();
  Matrix range(dim, rank);
  for (std::size_t j = 0; j < rank; ++j) {
    for (std::size_t i = 0; i < dim; ++i) range(i, j) = decomposition.u(i, j);
  }
  const Matrix full = complete_orthonormal(range, dim);
  Matrix complement(dim, dim - rank);
  for (std::size_t j = rank; j < dim; ++j) {
    for (std::size_t i = 0; i < dim; ++i) complement(i, j - rank) = full(i, j);
  }
  return complement;
}

Matrix complete_orthonormal(const Matrix& q, std::size_t total) {
  const std::size_t dim = q.rows();
  if (total > dim) {
    throw InvalidInput("complete_orthonormal: target exceeds ambient dimension");
  }
  Matrix out = q;
  while (out.cols() < total) {
    std::size_t best = 0;
    double best_norm = -1.0;
    Matrix best_residual(dim, 1);
    for (std::size_t candidate = 0; candidate < dim; ++candidate) {
      Matrix r(dim, 1);
      r(candidate, 0) = 1.0;
      // Two projection passes keep the residual orthogonal to working
      // precision even when it is small.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t j = 0; j < out.cols(); ++j) {
          double dot = 0.0;
          for (std::size_t i = 0; i < dim; ++i) dot += out(i, j) * r(i, 0);
          for (std::size_t i = 0; i < dim; ++i) r(i, 0) -= dot * out(i, j);
        }
      }
      const double norm = r.frobenius_norm();
      if (norm > best_norm) {
        best_norm = norm;
        best = candidate;
        best_residual = r;
      }
    }
    (void)best;
    if (best_norm <= 0.0) {
      throw NumericalFailure("complete_orthonormal: no independent direction");
    }
    best_residual *= 1.0 / best_norm;
    out.append_cols(best_residual);
  }
  return out;
}

Matrix orthonormalize_rows(const Matrix& a) {
  std::vector<std::vector<double>> kept;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::vector<double> r(a.row_ptr(i), a.row_ptr(i) + a.cols());
    double scale = 0.0;
    for (double v : r) scale += v * v;
    scale = std::max(1.0, std::sqrt(scale));
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& row : kept) {
        double dot = 0.0;
        for (std::size_t j = 0; j < r.size(); ++j) dot += row[j] * r[j];
        for (std::size_t j = 0; j < r.size(); ++j) r[j] -= dot * row[j];
      }
    }
    double norm = 0.0;
    for (double v : r) norm += v * v;
    norm = std::sqrt(norm);
    if (norm <= 1e-12 * scale) continue;  // dependent row, drop it
    for (double& v : r) v /= norm;
    kept.push_back(std::move(r));
  }
  Matrix out(kept.size(), a.cols());
  for (std::size_t i = 0; i < kept.size(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) = kept[i][j];
  }
  return out;
}

double orthonormal_defect(const Matrix& q) {
  if (q.cols() == 0) return 0.0;
  const Matrix gram = transpose_times(q, q);
  double defect = 0.0;
  for (std::size_t i = 0; i < gram.rows(); ++i) {
    for (std::size_t j = 0; j < gram.cols(); ++j) {
      const double target = i == j ? 1.0 : 0.0;
      defect = std::max(defect, std::abs(gram(i, j) - target));
    }
  }
  return defect;
}

double orthonormal_defect_rows(const Matrix& q) {
  if (q.rows() == 0) return 0.0;
  const Matrix gram = times_transpose(q, q);
  double defect = 0.0;
  for (std::size_t i = 0; i < gram.rows(); ++i) {
    for (std::size_t j = 0; j < gram.cols(); ++j) {
      const double target = i == j ? 1.0 : 0.0;
      defect = std::max(defect, std::abs(gram(i, j) - target));
    }
  }
  return defect;
}

Matrix cholesky(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("cholesky: matrix must be square");
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double sum = a(i, j);
      for (std::size_t k = 0; k < j; ++k) sum -= l(i, k) * l(j, k);
      if (i == j) {
        if (sum <= 0.0 || !std::isfinite(sum)) {
          throw NumericalFailure("cholesky: matrix not positive definite");
        }
        l(i, i) = std::sqrt(sum);
      } else {
        l(i, j) = sum / l(j, j);
      }
    }
  }
  return l;
}

}  // namespace ifl
