#include "doctest.h"

#include <cmath>
#include <vector>

#include "ifl/matrix.hpp"
#include "ifl/rng.hpp"
#include "support.hpp"

using ifl::Matrix;

TEST_CASE("matrix construction and shape invariants") {
  Matrix empty;
  CHECK(empty.rows() == 0);
  CHECK(empty.cols() == 0);

  Matrix zeros(2, 3);
  CHECK(zeros.rows() == 2);
  CHECK(zeros.cols() == 3);
  CHECK(zeros.max_abs() == 0.0);

  const Matrix m = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  CHECK(m(0, 1) == 2.0);
  CHECK(m(1, 0) == 3.0);

  CHECK_THROWS_AS(Matrix(2, 2, {1.0, 2.0, 3.0}), ifl::ShapeError);
  CHECK_THROWS_AS(Matrix(1, 2, {1.0, std::nan("")}), ifl::InvalidInput);
}

TEST_CASE("matrix multiply and transpose") {
  const Matrix a = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  const Matrix b = Matrix::from_rows({{5.0, 6.0}, {7.0, 8.0}});
  const Matrix c = a * b;
  CHECK(c(0, 0) == 19.0);
  CHECK(c(0, 1) == 22.0);
  CHECK(c(1, 0) == 43.0);
  CHECK(c(1, 1) == 50.0);

  CHECK_THROWS_AS(a * Matrix(3, 2), ifl::ShapeError);

  ifl::Rng rng(7);
  const Matrix x = test_support::random_matrix(rng, 5, 4);
  const Matrix y = test_support::random_matrix(rng, 5, 3);
  CHECK(ifl::max_abs_diff(ifl::transpose_times(x, y), x.transposed() * y) <
        1e-12);
  const Matrix z = test_support::random_matrix(rng, 6, 4);
  CHECK(ifl::max_abs_diff(ifl::times_transpose(x, z), x * z.transposed()) <
        1e-12);
}

TEST_CASE("matrix column gather and append") {
  const Matrix m = Matrix::from_rows({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}});
  const Matrix picked = m.gather_cols({2, 0});
  CHECK(picked(0, 0) == 3.0);
  CHECK(picked(1, 1) == 4.0);

  Matrix grown = m.col(0);
  grown.append_cols(m.col(2));
  CHECK(grown.cols() == 2);
  CHECK(grown(0, 1) == 3.0);
  CHECK(grown(1, 0) == 4.0);
}

TEST_CASE("rng streams are deterministic and fork independently") {
  ifl::Rng a(42);
  ifl::Rng b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  ifl::Rng parent(42);
  ifl::Rng child1 = parent.fork(1);
  ifl::Rng child2 = parent.fork(2);
  CHECK(child1.next_u64() != child2.next_u64());
  // Forking does not perturb the parent stream.
  ifl::Rng fresh(42);
  for (int i = 0; i < 100; ++i) fresh.next_u64();
  ifl::Rng parent_after(42);
  (void)parent_after.fork(9);
  for (int i = 0; i < 100; ++i) (void)parent_after.next_u64();
  CHECK(parent_after.fork(1).next_u64() == ifl::Rng(42).fork(1).next_u64());

  ifl::Rng u(3);
  for (int i = 0; i < 1000; ++i) {
    const double value = u.uniform();
    CHECK(value >= 0.0);
    CHECK(value < 1.0);
  }
}
