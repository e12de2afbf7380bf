#include <algorithm>
#include <cmath>
#include <vector>

#include "ifl/gpmem.hpp"
#include "ifl/inflora.hpp"
#include "ifl/linalg.hpp"
#include "ifl/model.hpp"
#include "ifl/rng.hpp"
#include "ifl/runner.hpp"

namespace ifl {

namespace {

Matrix gaussian(Rng& rng, std::size_t rows, std::size_t cols,
                double scale = 1.0) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.normal() * scale;
  }
  return m;
}

// Two-sided Jacobi eigenvalues of a symmetric matrix; the independent route
// used to vouch for the one-sided SVD.
std::vector<double> symmetric_eigenvalues(Matrix a) {
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

Network random_branched_net(Rng& rng, std::size_t classes) {
  const NetworkDims dims{8, {12, 10}, 10, classes};
  Network net = Network::build(dims, {0, 1}, rng);
  for (std::size_t l : {0ul, 1ul}) {
    const std::size_t in = net.layers[l].in_dim();
    net.layers[l].expand_branch(
        orthonormalize_rows(gaussian(rng, 3, in)));
    net.layers[l].branch->a =
        gaussian(rng, net.layers[l].out_dim(), 3, 0.4);
  }
  net.head.w = gaussian(rng, classes, dims.feature, 0.4);
  return net;
}

std::vector<int> random_labels(Rng& rng, std::size_t count,
                               std::size_t classes) {
  std::vector<int> labels(count);
  for (auto& label : labels) label = static_cast<int>(rng.below(classes));
  return labels;
}

double check_svd_reconstruction() {
  Rng rng(20001);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const Matrix a =
        gaussian(rng, 1 + rng.below(32), 1 + rng.below(32));
    const auto result = svd(a);
    const double norm = a.frobenius_norm();
    if (norm == 0.0) continue;
    worst = std::max(worst,
                     (a - result.reconstruct()).frobenius_norm() / norm);
  }
  return worst;
}

double check_svd_eigen_match() {
  Rng rng(20002);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix a = gaussian(rng, 1 + rng.below(8), 1 + rng.below(8));
    const auto result = svd(a);
    const auto eigen = symmetric_eigenvalues(transpose_times(a, a));
    for (std::size_t i = 0; i < result.s.size(); ++i) {
      const double expected = std::sqrt(std::max(0.0, eigen[i]));
      worst = std::max(worst, std::abs(result.s[i] - expected));
    }
  }
  return worst;
}

double check_projection_split() {
  Rng rng(20003);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dim = 2 + rng.below(16);
    const std::size_t k = 1 + rng.below(dim);
    const auto rotation = svd(gaussian(rng, dim, dim));
    Matrix basis(dim, k);
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < dim; ++i) basis(i, j) = rotation.u(i, j);
    }
    const Matrix x = gaussian(rng, dim, 6);
    const Matrix split = project_out(basis, x) + project_in(basis, x);
    worst = std::max(worst, max_abs_diff(split, x));
  }
  return worst;
}

double check_complement_orthogonality() {
  Rng rng(20004);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dim = 2 + rng.below(16);
    const std::size_t k = 1 + rng.below(dim);
    const auto rotation = svd(gaussian(rng, dim, dim));
    Matrix basis(dim, k);
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < dim; ++i) basis(i, j) = rotation.u(i, j);
    }
    Matrix joined = basis;
    joined.append_cols(orthonormal_complement(basis));
    worst = std::max(worst, orthonormal_defect(joined));
  }
  return worst;
}

double check_proposition1() {
  Rng rng(20005);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Network net = random_branched_net(rng, 6);
    const Matrix x = gaussian(rng, 8, 7);
    const auto labels = random_labels(rng, 7, 6);
    const double alpha = 0.05 + rng.uniform();
    worst = std::max(worst, proposition1_check(net, rng.below(2), x, labels,
                                               alpha));
  }
  return worst;
}

double check_gradient_span() {
  Rng rng(20006);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Network net = random_branched_net(rng, 6);
    const Matrix x = gaussian(rng, 8, 5);
    const auto labels = random_labels(rng, 5, 6);
    const ForwardCache cache = forward(net, x);
    const LossResult loss =
        local_ce_loss(cache.logits, labels, ClassRange{0, 6});
    const Gradients grads =
        backward(net, cache, loss.grad_logits, BackwardMode::FullWeightProbe);
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const auto span = svd(cache.inputs[l]);
      Matrix basis(cache.inputs[l].rows(), span.rank());
      for (std::size_t j = 0; j < basis.cols(); ++j) {
        for (std::size_t i = 0; i < basis.rows(); ++i) {
          basis(i, j) = span.u(i, j);
        }
      }
      const Matrix rows = grads.layers[l].w.transposed();
      const Matrix residual = project_out(basis, rows);
      for (std::size_t j = 0; j < residual.cols(); ++j) {
        double res_sq = 0.0;
        double row_sq = 0.0;
        for (std::size_t i = 0; i < residual.rows(); ++i) {
          res_sq += residual(i, j) * residual(i, j);
          row_sq += rows(i, j) * rows(i, j);
        }
        worst = std::max(worst, std::sqrt(res_sq) /
                                    std::max(1.0, std::sqrt(row_sq)));
      }
    }
  }
  return worst;
}

double check_interference_orthogonality() {
  Rng rng(20007);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Network net = random_branched_net(rng, 6);
    net.layers[1].adapted = false;
    net.layers[1].merge_branch();
    // Rebuild layer 0's branch orthogonal to a protected basis.
    net.layers[0].merge_branch();
    const Matrix protected_basis =
        orthonormalize_rows(gaussian(rng, 3, 8)).transposed();
    const Matrix complement_rows =
        orthonormal_complement(protected_basis).transposed();
    Matrix b(3, 8);
    for (std::size_t i = 0; i < 3; ++i) {
      for (std::size_t j = 0; j < 8; ++j) b(i, j) = complement_rows(i, j);
    }
    net.layers[0].expand_branch(b);

    OptimizerState opt = OptimizerState::adam(0.01, net);
    const Matrix x = gaussian(rng, 8, 12);
    const auto labels = random_labels(rng, 12, 6);
    for (int step = 0; step < 40; ++step) {
      const ForwardCache cache = forward(net, x);
      const LossResult loss =
          local_ce_loss(cache.logits, labels, ClassRange{0, 6});
      const Gradients grads =
          backward(net, cache, loss.grad_logits, BackwardMode::BranchOnly);
      apply_gradients(net, grads, opt);
    }
    const Matrix change = net.layers[0].branch->a * net.layers[0].branch->b;
    const double denom =
        change.frobenius_norm() * protected_basis.frobenius_norm();
    if (denom == 0.0) continue;
    worst = std::max(worst, (change * protected_basis).frobenius_norm() / denom);
  }
  return worst;
}

double check_loss_masking() {
  Rng rng(20008);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix logits = gaussian(rng, 6, 4);
    const auto labels = random_labels(rng, 4, 2);
    std::vector<int> shifted(labels);
    for (auto& label : shifted) label += 2;
    const auto base = local_ce_loss(logits, shifted, ClassRange{2, 4});
    Matrix poked = logits;
    poked(0, 0) += 50.0;
    poked(5, 3) -= 10.0;
    const auto after = local_ce_loss(poked, shifted, ClassRange{2, 4});
    worst = std::max(worst, std::abs(base.loss - after.loss));
    worst = std::max(worst, max_abs_diff(base.grad_logits, after.grad_logits));
  }
  return worst;
}

double check_memory_structure() {
  Rng rng(20009);
  const std::size_t dim = 12;
  GradientMemory memory(dim);
  const EpsilonSchedule schedule(0.9, 6);
  double worst = 0.0;
  std::size_t previous_grad = 0;
  std::size_t previous_complement = dim;
  for (std::size_t t = 1; t <= 6; ++t) {
    const Matrix inputs = gaussian(rng, dim, 3) * gaussian(rng, 3, 24);
    const double eps_th = epsilon_schedule(schedule, t);
    const bool was_grad_space = memory.mode() == MemoryMode::GradSpace;
    if (was_grad_space) {
      expand_memory(memory, inputs, eps_th);
    } else {
      reduce_complement(memory, inputs, eps_th);
    }
    maybe_switch(memory);
    worst = std::max(worst, orthonormal_defect(memory.basis()));
    if (memory.grad_space_dim() < previous_grad ||
        memory.complement_dim() > previous_complement) {
      worst = std::max(worst, 1.0);  // monotonicity breach
    }
    if (memory.basis().cols() !=
        std::min(memory.grad_space_dim(), memory.complement_dim())) {
      worst = std::max(worst, 1.0);  // stored side must be the smaller one
    }
    if (!was_grad_space && memory.mode() == MemoryMode::GradSpace) {
      worst = std::max(worst, 1.0);  // the switch is one-way
    }
    previous_grad = memory.grad_space_dim();
    previous_complement = memory.complement_dim();
  }
  return worst;
}

double check_zero_init_forward() {
  Rng rng(20010);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const NetworkDims dims{8, {12, 10}, 10, 6};
    Network net = Network::build(dims, {0, 1}, rng);
    const Matrix x = gaussian(rng, 8, 5);
    const Matrix before = forward(net, x).logits;
    net.layers[0].expand_branch(orthonormalize_rows(gaussian(rng, 3, 8)));
    net.layers[1].expand_branch(orthonormalize_rows(gaussian(rng, 3, 12)));
    const Matrix after = forward(net, x).logits;
    worst = std::max(worst, max_abs_diff(before, after));
  }
  return worst;
}

double check_merge_equivalence() {
  Rng rng(20011);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Network net = random_branched_net(rng, 6);
    Network merged = net;
    merged.layers[0].merge_branch();
    merged.layers[1].merge_branch();
    const Matrix x = gaussian(rng, 8, 5);
    worst = std::max(worst, max_abs_diff(forward(net, x).logits,
                                         forward(merged, x).logits));
  }
  return worst;
}

double check_param_accounting() {
  Rng rng(20012);
  Network net = random_branched_net(rng, 6);
  double worst = 0.0;
  for (std::size_t l : {0ul, 1ul}) {
    const auto& branch = *net.layers[l].branch;
    const std::size_t actual = branch.a.size() + branch.b.size();
    const std::size_t formula =
        (net.layers[l].in_dim() + net.layers[l].out_dim()) * branch.b.rows();
    worst = std::max(worst,
                     std::abs(static_cast<double>(actual) -
                              static_cast<double>(formula)));
  }
  return worst;
}

}  // namespace

std::vector<CheckResult> check_suite() {
  std::vector<CheckResult> results;
  const auto run = [&](const std::string& name, double tolerance,
                       double observed) {
    results.push_back({name, tolerance, observed, observed <= tolerance});
  };
  run("svd_reconstruction", 1e-10, check_svd_reconstruction());
  run("svd_eigen_match", 1e-8, check_svd_eigen_match());
  run("projection_split", 1e-10, check_projection_split());
  run("complement_orthogonality", 1e-8, check_complement_orthogonality());
  run("proposition1", 1e-10, check_proposition1());
  run("gradient_span", 1e-8, check_gradient_span());
  run("interference_orthogonality", 1e-6, check_interference_orthogonality());
  run("loss_masking", 0.0, check_loss_masking());
  run("memory_structure", 1e-8, check_memory_structure());
  run("zero_init_forward", 1e-12, check_zero_init_forward());
  run("merge_equivalence", 1e-10, check_merge_equivalence());
  run("param_accounting", 0.0, check_param_accounting());
  return results;
}

}  // namespace ifl
