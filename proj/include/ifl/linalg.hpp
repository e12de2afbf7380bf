#pragma once

#include <cstddef>
#include <vector>

#include "ifl/matrix.hpp"

namespace ifl {

// Thin SVD a = u * diag(s) * vt with u: m x min(m,n), vt: min(m,n) x n.
// Singular values are sorted descending. Sign convention: in every row of vt
// the entry of largest magnitude is non-negative (first such entry on ties),
// with the paired u column flipped to preserve the product.
struct SvdResult {
  Matrix u;
  std::vector<double> s;
  Matrix vt;

  // Values at or below this are treated as numerically zero by rank().
  double rank_tolerance() const;
  std::size_t rank() const;
  Matrix reconstruct() const;
};

SvdResult svd(const Matrix& a);

// x - basis * basis^T * x. Empty basis returns x unchanged.
Matrix project_out(const Matrix& basis, const Matrix& x);

// basis * basis^T * x. Empty basis returns the zero matrix.
Matrix project_in(const Matrix& basis, const Matrix& x);

// Orthonormal basis of the orthogonal complement of span(basis): the left
// singular directions of the input carrying numerically-zero singular values.
// For a d x k input returns d x (d - k).
Matrix orthonormal_complement(const Matrix& basis);

// Extends the orthonormal columns of q to `total` columns, picking for each
// new slot the standard basis vector with the largest residual (deterministic,
// ties broken by lowest index).
Matrix complete_orthonormal(const Matrix& q, std::size_t total);

// Modified Gram-Schmidt over rows; rows whose residual collapses are dropped.
Matrix orthonormalize_rows(const Matrix& a);

// max |q^T q - I|; 0 columns count as perfectly orthonormal.
double orthonormal_defect(const Matrix& q);
double orthonormal_defect_rows(const Matrix& q);

// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
Matrix cholesky(const Matrix& a);

inline constexpr double kOrthonormalTolerance = 1e-8;

}  // namespace ifl
