#include "doctest.h"

#include <cmath>
#include <vector>

#include "ifl/linalg.hpp"
#include "ifl/model.hpp"
#include "ifl/rng.hpp"
#include "support.hpp"

using ifl::Matrix;
using ifl::Network;

namespace {

Network small_net(ifl::Rng& rng) {
  ifl::NetworkDims dims;
  dims.input = 4;
  dims.hidden = {6};
  dims.feature = 5;
  dims.classes = 3;
  return Network::build(dims, {0}, rng);
}

Matrix random_orthonormal_rows(ifl::Rng& rng, std::size_t rows,
                               std::size_t cols) {
  return ifl::orthonormalize_rows(test_support::random_matrix(rng, rows, cols));
}

}  // namespace

TEST_CASE("forward matches hand arithmetic for a single branched layer") {
  ifl::LoraLinearLayer layer;
  layer.w = Matrix::identity(2);
  layer.bias = Matrix(2, 1);
  layer.adapted = true;
  layer.expand_branch(Matrix::from_rows({{0.0, 1.0}}));
  layer.branch->a = Matrix::from_rows({{1.0}, {0.0}});

  ifl::Network net;
  net.dims = {2, {}, 2, 2};
  net.layers.push_back(layer);
  net.head.w = Matrix::identity(2);
  net.head.bias = Matrix(2, 1);

  const Matrix x = Matrix::column({1.0, 2.0});
  const auto cache = ifl::forward(net, x);
  // W h + A B h = (1,2) + (2,0)
  CHECK(cache.preacts[0](0, 0) == doctest::Approx(3.0));
  CHECK(cache.preacts[0](1, 0) == doctest::Approx(2.0));
}

TEST_CASE("branch expansion keeps the forward pass unchanged") {
  ifl::Rng rng(21);
  Network net = small_net(rng);
  const Matrix x = test_support::random_matrix(rng, 4, 7);
  const Matrix before = ifl::forward(net, x).logits;

  net.layers[0].expand_branch(random_orthonormal_rows(rng, 2, 4));
  const Matrix after = ifl::forward(net, x).logits;
  CHECK(ifl::max_abs_diff(before, after) <= 1e-12);

  CHECK_THROWS_AS(
      net.layers[0].expand_branch(random_orthonormal_rows(rng, 2, 4)),
      ifl::StateError);
}

TEST_CASE("expand_branch rejects non-orthonormal rows") {
  ifl::Rng rng(22);
  Network net = small_net(rng);
  CHECK_THROWS_AS(
      net.layers[0].expand_branch(Matrix::from_rows({{0.5, 0.5, 0.0, 0.0}})),
      ifl::InvalidInput);
  // The waiver used by raw-Gaussian fidelity runs skips the check.
  net.layers[0].expand_branch(Matrix::from_rows({{0.5, 0.5, 0.0, 0.0}}), false);
  CHECK(net.layers[0].has_branch());
}

TEST_CASE("merge_branch folds the product and is single-shot") {
  ifl::LoraLinearLayer layer;
  layer.w = Matrix::identity(2);
  layer.bias = Matrix(2, 1);
  layer.expand_branch(Matrix::from_rows({{0.0, 1.0}}));
  layer.branch->a = Matrix::from_rows({{1.0}, {0.0}});
  layer.merge_branch();
  CHECK(ifl::max_abs_diff(layer.w, Matrix::from_rows({{1.0, 1.0}, {0.0, 1.0}})) ==
        0.0);
  CHECK_FALSE(layer.has_branch());
  CHECK_THROWS_AS(layer.merge_branch(), ifl::StateError);
}

TEST_CASE("merging a zero branch leaves the weight unchanged") {
  ifl::Rng rng(23);
  Network net = small_net(rng);
  const Matrix w_before = net.layers[0].w;
  net.layers[0].expand_branch(random_orthonormal_rows(rng, 2, 4));
  net.layers[0].merge_branch();
  CHECK(ifl::max_abs_diff(net.layers[0].w, w_before) == 0.0);
}

TEST_CASE("branched and merged forward passes agree") {
  ifl::Rng rng(24);
  for (int trial = 0; trial < 100; ++trial) {
    Network net = small_net(rng);
    net.layers[0].expand_branch(random_orthonormal_rows(rng, 2, 4));
    net.layers[0].branch->a = test_support::random_matrix(rng, 6, 2);
    Network merged = net;
    merged.layers[0].merge_branch();

    const Matrix x = test_support::random_matrix(rng, 4, 3);
    const Matrix branched = ifl::forward(net, x).logits;
    const Matrix folded = ifl::forward(merged, x).logits;
    CHECK(ifl::max_abs_diff(branched, folded) <= 1e-10);
  }
}

TEST_CASE("local cross-entropy matches scalar arithmetic") {
  Matrix logits(4, 1);
  logits(0, 0) = 2.0;
  logits(1, 0) = 1.0;
  const auto result = ifl::local_ce_loss(logits, {1}, {0, 2});
  CHECK(result.loss == doctest::Approx(std::log(1.0 + std::exp(1.0)))
                            .epsilon(1e-12));
  // Masked classes carry exactly zero gradient.
  CHECK(result.grad_logits(2, 0) == 0.0);
  CHECK(result.grad_logits(3, 0) == 0.0);

  Matrix even(4, 1);
  const auto equal_pair = ifl::local_ce_loss(even, {0}, {0, 2});
  CHECK(equal_pair.loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  CHECK_THROWS_AS(ifl::local_ce_loss(logits, {3}, {0, 2}), ifl::InvalidInput);
}

TEST_CASE("loss masking ignores out-of-task logits entirely") {
  ifl::Rng rng(25);
  Matrix logits = test_support::random_matrix(rng, 6, 4);
  const std::vector<int> labels = {2, 3, 2, 2};
  const auto base = ifl::local_ce_loss(logits, labels, {2, 4});
  Matrix poked = logits;
  poked(0, 1) += 100.0;
  poked(5, 3) -= 3.0;
  const auto after = ifl::local_ce_loss(poked, labels, {2, 4});
  CHECK(base.loss == after.loss);
  CHECK(ifl::max_abs_diff(base.grad_logits, after.grad_logits) == 0.0);
}

TEST_CASE("backward matches hand arithmetic for the branch gradient") {
  // dL/de = [1], h = (1,0)^T, B = [0,1] -> dL/dA = 0.
  ifl::LoraLinearLayer layer;
  layer.w = Matrix::identity(2);
  layer.bias = Matrix(2, 1);
  layer.adapted = true;
  layer.expand_branch(Matrix::from_rows({{0.0, 1.0}}));

  ifl::Network net;
  net.dims = {2, {}, 2, 2};
  net.layers.push_back(layer);
  net.head.w = Matrix::identity(2);
  net.head.bias = Matrix(2, 1);

  const Matrix x = Matrix::column({1.0, 0.0});
  const auto cache = ifl::forward(net, x);
  Matrix grad_logits(2, 1);
  grad_logits(0, 0) = 1.0;
  const auto grads =
      ifl::backward(net, cache, grad_logits, ifl::BackwardMode::BranchOnly);
  CHECK(grads.layers[0].branch_a.max_abs() == 0.0);
}

TEST_CASE("gradients match central finite differences") {
  ifl::Rng rng(26);
  ifl::NetworkDims dims;
  dims.input = 5;
  dims.hidden = {7, 6};
  dims.feature = 6;
  dims.classes = 4;
  Network net = Network::build(dims, {0, 1}, rng);
  net.layers[0].expand_branch(random_orthonormal_rows(rng, 2, 5));
  net.layers[1].expand_branch(random_orthonormal_rows(rng, 3, 7));
  net.layers[0].branch->a = test_support::random_matrix(rng, 7, 2, 0.3);
  net.layers[1].branch->a = test_support::random_matrix(rng, 6, 3, 0.3);
  net.head.w = test_support::random_matrix(rng, 4, 6, 0.3);

  const Matrix x = test_support::random_matrix(rng, 5, 8);
  const std::vector<int> labels = {0, 1, 2, 3, 1, 0, 2, 1};
  const ifl::ClassRange range{0, 4};

  const auto loss_at = [&](const Network& candidate) {
    const auto cache = ifl::forward(candidate, x);
    return ifl::local_ce_loss(cache.logits, labels, range).loss;
  };

  const auto cache = ifl::forward(net, x);
  const auto loss = ifl::local_ce_loss(cache.logits, labels, range);
  const auto grads =
      ifl::backward(net, cache, loss.grad_logits, ifl::BackwardMode::BranchOnly);

  const double step = 1e-5;
  for (int probe = 0; probe < 20; ++probe) {
    const std::size_t which = rng.below(3);
    double analytic = 0.0;
    double numeric = 0.0;
    if (which == 0) {
      const std::size_t layer = rng.below(2);
      Matrix& a = net.layers[layer].branch->a;
      const std::size_t i = rng.below(a.rows());
      const std::size_t j = rng.below(a.cols());
      analytic = grads.layers[layer].branch_a(i, j);
      Network plus = net;
      plus.layers[layer].branch->a(i, j) += step;
      Network minus = net;
      minus.layers[layer].branch->a(i, j) -= step;
      numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * step);
    } else if (which == 1) {
      const std::size_t i = rng.below(net.head.w.rows());
      const std::size_t j = rng.below(net.head.w.cols());
      analytic = grads.head_w(i, j);
      Network plus = net;
      plus.head.w(i, j) += step;
      Network minus = net;
      minus.head.w(i, j) -= step;
      numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * step);
    } else {
      const std::size_t i = rng.below(net.head.bias.rows());
      analytic = grads.head_bias(i, 0);
      Network plus = net;
      plus.head.bias(i, 0) += step;
      Network minus = net;
      minus.head.bias(i, 0) -= step;
      numeric = (loss_at(plus) - loss_at(minus)) / (2.0 * step);
    }
    const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
    CHECK(std::abs(analytic - numeric) / denom < 1e-6);
  }
}

TEST_CASE("full-weight gradient rows lie in the span of the batch inputs") {
  ifl::Rng rng(27);
  ifl::NetworkDims dims;
  dims.input = 6;
  dims.hidden = {8};
  dims.feature = 7;
  dims.classes = 3;
  Network net = Network::build(dims, {0}, rng);
  net.layers[0].expand_branch(random_orthonormal_rows(rng, 2, 6));
  net.head.w = test_support::random_matrix(rng, 3, 7, 0.4);

  const Matrix x = test_support::random_matrix(rng, 6, 5);
  const std::vector<int> labels = {0, 1, 2, 0, 1};
  const auto cache = ifl::forward(net, x);
  const auto loss = ifl::local_ce_loss(cache.logits, labels, {0, 3});
  const auto grads = ifl::backward(net, cache, loss.grad_logits,
                                   ifl::BackwardMode::FullWeightProbe);

  for (std::size_t layer = 0; layer < net.layers.size(); ++layer) {
    const auto inputs = ifl::svd(cache.inputs[layer]);
    Matrix basis(cache.inputs[layer].rows(), inputs.rank());
    for (std::size_t j = 0; j < basis.cols(); ++j) {
      for (std::size_t i = 0; i < basis.rows(); ++i) {
        basis(i, j) = inputs.u(i, j);
      }
    }
    const Matrix grad_rows = grads.layers[layer].w.transposed();
    const Matrix residual = ifl::project_out(basis, grad_rows);
    for (std::size_t j = 0; j < residual.cols(); ++j) {
      double norm = 0.0;
      double row_norm = 0.0;
      for (std::size_t i = 0; i < residual.rows(); ++i) {
        norm += residual(i, j) * residual(i, j);
        row_norm += grad_rows(i, j) * grad_rows(i, j);
      }
      CHECK(std::sqrt(norm) <= 1e-8 * std::max(1.0, std::sqrt(row_norm)));
    }
  }
}

TEST_CASE("backward requires a branch on adapted layers in BranchOnly mode") {
  ifl::Rng rng(28);
  Network net = small_net(rng);
  const Matrix x = test_support::random_matrix(rng, 4, 2);
  const auto cache = ifl::forward(net, x);
  Matrix grad_logits(3, 2);
  CHECK_THROWS_AS(
      ifl::backward(net, cache, grad_logits, ifl::BackwardMode::BranchOnly),
      ifl::StateError);
}

TEST_CASE("sgd step is exact and frozen tensors stay bit-identical") {
  ifl::Rng rng(29);
  Network net = small_net(rng);
  net.layers[0].expand_branch(random_orthonormal_rows(rng, 2, 4));
  const Matrix w_before = net.layers[0].w;
  const Matrix b_before = net.layers[0].branch->b;
  const Matrix bias_before = net.layers[0].bias;

  auto opt = ifl::OptimizerState::sgd(0.1);
  const Matrix x = test_support::random_matrix(rng, 4, 6);
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
  for (int iter = 0; iter < 100; ++iter) {
    const auto cache = ifl::forward(net, x);
    const auto loss = ifl::local_ce_loss(cache.logits, labels, {0, 3});
    const auto grads = ifl::backward(net, cache, loss.grad_logits,
                                     ifl::BackwardMode::BranchOnly);
    if (iter == 0) {
      // A starts at zero, so one step lands exactly at -lr * grad.
      Network fresh = net;
      auto fresh_opt = ifl::OptimizerState::sgd(0.1);
      ifl::apply_gradients(fresh, grads, fresh_opt);
      Matrix expected = grads.layers[0].branch_a;
      expected *= -0.1;
      CHECK(ifl::max_abs_diff(fresh.layers[0].branch->a, expected) == 0.0);
    }
    ifl::apply_gradients(net, grads, opt);
  }
  CHECK(net.layers[0].w == w_before);
  CHECK(net.layers[0].branch->b == b_before);
  CHECK(net.layers[0].bias == bias_before);
}

TEST_CASE("adam matches the scalar recurrence oracle") {
  ifl::Rng rng(30);
  Network net = small_net(rng);
  net.layers[0].expand_branch(random_orthonormal_rows(rng, 2, 4));
  auto opt = ifl::OptimizerState::adam(0.05, net);

  // Track one branch entry and one head entry against the scalar oracle.
  test_support::ScalarAdam branch_oracle;
  test_support::ScalarAdam head_oracle;
  double branch_ref = net.layers[0].branch->a(1, 1);
  double head_ref = net.head.w(2, 3);

  const Matrix x = test_support::random_matrix(rng, 4, 6);
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
  for (int iter = 0; iter < 25; ++iter) {
    const auto cache = ifl::forward(net, x);
    const auto loss = ifl::local_ce_loss(cache.logits, labels, {0, 3});
    const auto grads = ifl::backward(net, cache, loss.grad_logits,
                                     ifl::BackwardMode::BranchOnly);
    branch_ref = branch_oracle.update(branch_ref,
                                      grads.layers[0].branch_a(1, 1), 0.05,
                                      opt.beta1, opt.beta2, opt.epsilon);
    head_ref = head_oracle.update(head_ref, grads.head_w(2, 3), 0.05,
                                  opt.beta1, opt.beta2, opt.epsilon);
    ifl::apply_gradients(net, grads, opt);
    CHECK(std::abs(net.layers[0].branch->a(1, 1) - branch_ref) < 1e-12);
    CHECK(std::abs(net.head.w(2, 3) - head_ref) < 1e-12);

    if (iter == 0) {
      // Bias correction makes the first update magnitude approximately lr.
      CHECK(std::abs(std::abs(net.head.w(2, 3) - 0.0) -
                     0.05 * std::abs(grads.head_w(2, 3)) /
                         (std::abs(grads.head_w(2, 3)) + opt.epsilon)) <
            1e-10);
    }
  }
}
