#pragma once

// Test-only oracles. These deliberately use different algorithms than the
// library so they can vouch for it independently.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "ifl/matrix.hpp"
#include "ifl/rng.hpp"

namespace test_support {

inline ifl::Matrix random_matrix(ifl::Rng& rng, std::size_t rows,
                                 std::size_t cols, double scale = 1.0) {
  ifl::Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.normal() * scale;
  }
  return m;
}

// Eigenvalues of a symmetric matrix by classical two-sided Jacobi rotations,
// returned in descending order.
inline std::vector<double> symmetric_eigenvalues(ifl::Matrix a) {
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < 200; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    }
    if (off < 1e-28) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double sign = theta >= 0.0 ? 1.0 : -1.0;
        const double t =
            sign / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
    }
  }
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a(i, i);
  std::sort(values.begin(), values.end(), std::greater<double>());
  return values;
}

// Reference Adam recurrence on a single scalar.
struct ScalarAdam {
  double m = 0.0;
  double v = 0.0;
  long step = 0;

  double update(double param, double grad, double lr, double beta1,
                double beta2, double eps) {
    ++step;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad * grad;
    const double m_hat = m / (1.0 - std::pow(beta1, step));
    const double v_hat = v / (1.0 - std::pow(beta2, step));
    return param - lr * m_hat / (std::sqrt(v_hat) + eps);
  }
};

}  // namespace test_support
