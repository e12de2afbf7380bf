#include "doctest.h"

#include <cmath>
#include <vector>

#include "ifl/data.hpp"
#include "ifl/gpmem.hpp"
#include "ifl/inflora.hpp"
#include "ifl/linalg.hpp"
#include "ifl/model.hpp"
#include "ifl/rng.hpp"
#include "support.hpp"

using ifl::DesignVariant;
using ifl::GradientMemory;
using ifl::Matrix;
using ifl::Network;

namespace {

ifl::TaskSpec bench_spec(std::size_t tasks = 3) {
  ifl::TaskSpec spec;
  spec.tasks = tasks;
  spec.classes_per_task = 2;
  spec.train_per_class = 40;
  spec.test_per_class = 20;
  spec.input_dim = 8;
  spec.separation = 4.0;
  spec.seed = 11;
  spec.base_classes = 4;
  return spec;
}

Network bench_net(ifl::Rng& rng, std::size_t classes) {
  ifl::NetworkDims dims;
  dims.input = 8;
  dims.hidden = {12, 10};
  dims.feature = 10;
  dims.classes = classes;
  return Network::build(dims, {0, 1}, rng);
}

std::vector<GradientMemory> fresh_memories(const Network& net) {
  std::vector<GradientMemory> memories;
  for (std::size_t l : net.adapted_layer_indices()) {
    memories.emplace_back(net.layers[l].in_dim());
  }
  return memories;
}

ifl::TaskTrainConfig quick_config(DesignVariant variant) {
  ifl::TaskTrainConfig cfg;
  cfg.rank = 3;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.variant = variant;
  cfg.seed = 5;
  cfg.epsilon = 0.9;
  return cfg;
}

}  // namespace

TEST_CASE("collect_inputs returns the raw batch at layer zero") {
  ifl::Rng rng(61);
  Network net = bench_net(rng, 6);
  const Matrix batch = test_support::random_matrix(rng, 8, 5);
  const Matrix collected = ifl::collect_inputs(net, 0, batch);
  CHECK(collected == batch);

  const Matrix deeper = ifl::collect_inputs(net, 1, batch);
  CHECK(deeper.rows() == 12);
  CHECK(deeper.cols() == 5);

  CHECK_THROWS_AS(ifl::collect_inputs(net, 0, Matrix(8, 0)),
                  ifl::InvalidInput);
  CHECK_THROWS_AS(ifl::collect_inputs(net, 9, batch), ifl::InvalidInput);
}

TEST_CASE("design matches the hand-computed first-task case") {
  // Empty memory, h = [[0,0],[3,4]], r = 1 -> B = [0, 1].
  GradientMemory memory(2);
  ifl::Rng rng(62);
  const Matrix h = Matrix::from_rows({{0.0, 0.0}, {3.0, 4.0}});
  const Matrix b =
      ifl::design_reduction_matrix(h, memory, 1, DesignVariant::InfLoRA, rng);
  REQUIRE(b.rows() == 1);
  CHECK(b(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(b(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("design projects away the remembered directions") {
  // M = {e2}, h = [[1,2],[3,4]] -> projected rows [[1,2],[0,0]] -> B = [1, 0].
  GradientMemory memory(ifl::MemoryMode::GradSpace,
                        Matrix::column({0.0, 1.0}));
  ifl::Rng rng(63);
  const Matrix h = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  const Matrix b =
      ifl::design_reduction_matrix(h, memory, 1, DesignVariant::InfLoRA, rng);
  REQUIRE(b.rows() == 1);
  CHECK(b(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b(0, 1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("rank truncates to the usable directions") {
  GradientMemory memory(4);
  ifl::Rng rng(64);
  // Rank-2 inputs in a 4-dim space.
  const Matrix thin = test_support::random_matrix(rng, 4, 2);
  const Matrix wide = test_support::random_matrix(rng, 2, 12);
  const Matrix b = ifl::design_reduction_matrix(thin * wide, memory, 5,
                                                DesignVariant::InfLoRA, rng);
  CHECK(b.rows() == 2);
  CHECK(ifl::orthonormal_defect_rows(b) <= 1e-10);
}

TEST_CASE("degenerate subspace raises and rank validation holds") {
  // Everything the inputs span is already remembered.
  GradientMemory memory(ifl::MemoryMode::GradSpace,
                        Matrix::column({1.0, 0.0}));
  ifl::Rng rng(65);
  const Matrix h = Matrix::from_rows({{1.0, 2.0}, {0.0, 0.0}});
  CHECK_THROWS_AS(ifl::design_reduction_matrix(h, memory, 2,
                                               DesignVariant::InfLoRA, rng),
                  ifl::DegenerateSubspace);
  CHECK_THROWS_AS(ifl::design_reduction_matrix(h, memory, 0,
                                               DesignVariant::InfLoRA, rng),
                  ifl::InvalidInput);
}

TEST_CASE("variant-specific design behaviour") {
  ifl::Rng rng(66);
  const Matrix h = test_support::random_matrix(rng, 6, 20);
  GradientMemory memory(ifl::MemoryMode::GradSpace,
                        Matrix::column({1.0, 0.0, 0.0, 0.0, 0.0, 0.0}));

  SUBCASE("InfLoRA rows avoid the memory and live in the projected span") {
    ifl::Rng stream(1);
    const Matrix b = ifl::design_reduction_matrix(h, memory, 3,
                                                  DesignVariant::InfLoRA, stream);
    CHECK(ifl::orthonormal_defect_rows(b) <= 1e-10);
    CHECK(ifl::times_transpose(b, memory.basis().transposed()).max_abs() <=
          1e-8);
    // Rows lie in the span of the projected inputs.
    const Matrix projected = ifl::project_out(memory.basis(), h);
    const auto span = ifl::svd(projected);
    Matrix basis(projected.rows(), span.rank());
    for (std::size_t j = 0; j < basis.cols(); ++j) {
      for (std::size_t i = 0; i < basis.rows(); ++i) {
        basis(i, j) = span.u(i, j);
      }
    }
    const Matrix residual = ifl::project_out(basis, b.transposed());
    CHECK(residual.max_abs() <= 1e-8);
  }

  SUBCASE("NtOnly ignores the memory") {
    ifl::Rng stream(1);
    const Matrix b = ifl::design_reduction_matrix(h, memory, 3,
                                                  DesignVariant::NtOnly, stream);
    // Generic dense inputs make every row overlap the remembered direction.
    CHECK(ifl::times_transpose(b, memory.basis().transposed()).max_abs() >
          1e-4);
  }

  SUBCASE("MperpOnly ignores the inputs but respects the memory") {
    ifl::Rng stream1(1);
    ifl::Rng stream2(1);
    const Matrix b1 = ifl::design_reduction_matrix(
        h, memory, 3, DesignVariant::MperpOnly, stream1);
    const Matrix b2 = ifl::design_reduction_matrix(
        2.0 * h, memory, 3, DesignVariant::MperpOnly, stream2);
    CHECK(b1 == b2);  // input content does not matter, only its shape
    CHECK(ifl::times_transpose(b1, memory.basis().transposed()).max_abs() <=
          1e-8);
  }

  SUBCASE("RandomB is orthonormal by default, raw behind the flag") {
    ifl::Rng stream1(1);
    const Matrix b = ifl::design_reduction_matrix(h, memory, 3,
                                                  DesignVariant::RandomB,
                                                  stream1);
    CHECK(ifl::orthonormal_defect_rows(b) <= 1e-10);
    ifl::Rng stream2(1);
    const Matrix raw = ifl::design_reduction_matrix(
        h, memory, 3, DesignVariant::RandomB, stream2, true);
    CHECK(ifl::orthonormal_defect_rows(raw) > 1e-3);
  }
}

TEST_CASE("proposition 1 holds at float precision across variants") {
  ifl::Rng rng(67);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Network net = bench_net(rng, 6);
    // Random branch state mid-training on both adapted layers.
    for (std::size_t l : {0ul, 1ul}) {
      const std::size_t dim = net.layers[l].in_dim();
      const Matrix b = ifl::orthonormalize_rows(
          test_support::random_matrix(rng, 3, dim));
      net.layers[l].expand_branch(b);
      net.layers[l].branch->a =
          test_support::random_matrix(rng, net.layers[l].out_dim(), b.rows(),
                                      0.4);
    }
    net.head.w = test_support::random_matrix(rng, 6, 10, 0.4);

    const Matrix x = test_support::random_matrix(rng, 8, 7);
    std::vector<int> labels(7);
    for (auto& label : labels) label = static_cast<int>(rng.below(6));
    const double alpha = 0.05 + rng.uniform();
    const std::size_t layer = rng.below(2);
    worst = std::max(worst,
                     ifl::proposition1_check(net, layer, x, labels, alpha));
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("proposition 1 hand case: gradient orthogonal to the branch rows") {
  ifl::LoraLinearLayer layer;
  layer.w = Matrix::identity(2);
  layer.bias = Matrix(2, 1);
  layer.adapted = true;
  layer.expand_branch(Matrix::from_rows({{0.0, 1.0}}));

  Network net;
  net.dims = {2, {}, 2, 2};
  net.layers.push_back(layer);
  net.head.w = Matrix::identity(2);
  net.head.bias = Matrix(2, 1);

  const Matrix x = Matrix::column({1.0, 0.0});
  CHECK(ifl::proposition1_check(net, 0, x, {0}, 0.1) == 0.0);

  Network no_branch = net;
  no_branch.layers[0].merge_branch();
  CHECK_THROWS_AS(ifl::proposition1_check(no_branch, 0, x, {0}, 0.1),
                  ifl::StateError);
}

TEST_CASE("proposition 1 with a full-rank square branch") {
  ifl::Rng rng(68);
  Network net = bench_net(rng, 6);
  net.layers[0].expand_branch(Matrix::identity(8));
  net.layers[0].branch->a = test_support::random_matrix(rng, 12, 8, 0.3);
  net.layers[1].expand_branch(
      ifl::orthonormalize_rows(test_support::random_matrix(rng, 2, 12)));
  const Matrix x = test_support::random_matrix(rng, 8, 4);
  CHECK(ifl::proposition1_check(net, 0, x, {0, 1, 2, 3}, 0.2) <= 1e-10);
}

TEST_CASE("interference stays orthogonal to a protected basis") {
  // If every branch row avoids M, no amount of training moves the composed
  // weight along M.
  ifl::Rng rng(69);
  Network net = bench_net(rng, 6);
  const Matrix m = ifl::orthonormalize_rows(
                       test_support::random_matrix(rng, 3, 8))
                       .transposed();  // 8 x 3 basis
  const Matrix complement_rows =
      ifl::orthonormal_complement(m).transposed();  // 5 x 8
  Matrix b(3, 8);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 8; ++j) b(i, j) = complement_rows(i, j);
  }
  net.layers[0].expand_branch(b);

  auto opt = ifl::OptimizerState::adam(0.01, net);
  const Matrix x = test_support::random_matrix(rng, 8, 16);
  std::vector<int> labels(16);
  for (auto& label : labels) label = static_cast<int>(rng.below(6));
  net.layers[1].adapted = false;  // isolate the protected layer
  for (int step = 0; step < 50; ++step) {
    const auto cache = ifl::forward(net, x);
    const auto loss = ifl::local_ce_loss(cache.logits, labels, {0, 6});
    const auto grads =
        ifl::backward(net, cache, loss.grad_logits,
                      ifl::BackwardMode::BranchOnly);
    ifl::apply_gradients(net, grads, opt);
  }
  const Matrix change = net.layers[0].branch->a * net.layers[0].branch->b;
  const double leak = (change * m).frobenius_norm();
  CHECK(leak <= 1e-6 * change.frobenius_norm() * m.frobenius_norm());
}

TEST_CASE("train_task runs tasks end to end with interference-free design") {
  const auto sequence = ifl::gen_task_sequence(bench_spec());
  ifl::Rng rng(70);
  Network net = bench_net(rng, sequence.total_classes);
  auto memories = fresh_memories(net);
  auto cfg = quick_config(DesignVariant::InfLoRA);

  Matrix w0_initial = net.layers[0].w;
  Matrix w1_initial = net.layers[1].w;
  std::vector<ifl::TaskReport> reports;
  for (std::size_t t = 0; t < sequence.tasks.size(); ++t) {
    // Snapshot the memory that protects old tasks before training.
    std::vector<Matrix> guard;
    for (const auto& memory : memories) {
      guard.push_back(memory.mode() == ifl::MemoryMode::GradSpace
                          ? memory.basis()
                          : ifl::orthonormal_complement(memory.basis()));
    }
    const auto report = ifl::train_task(net, memories, sequence.tasks[t], cfg,
                                        t + 1, sequence.tasks.size());
    reports.push_back(report);

    CHECK(report.epoch_losses.size() == cfg.epochs);
    CHECK(report.layers.size() == 2);
    for (std::size_t a = 0; a < 2; ++a) {
      // The merged increment cannot move along the protected directions.
      if (guard[a].cols() > 0 && !report.layers[a].degenerate) {
        const double leak =
            (report.layers[a].increment * guard[a]).frobenius_norm();
        CHECK(leak <= 1e-8 * std::max(1.0, report.layers[a].increment
                                               .frobenius_norm()));
      }
      CHECK_FALSE(net.layers[report.layers[a].layer].has_branch());
    }
  }

  // Composed weights telescope: final w equals the initial plus the merged
  // increments.
  Matrix expected0 = w0_initial;
  Matrix expected1 = w1_initial;
  for (const auto& report : reports) {
    expected0 += report.layers[0].increment;
    expected1 += report.layers[1].increment;
  }
  CHECK(ifl::max_abs_diff(net.layers[0].w, expected0) <= 1e-8);
  CHECK(ifl::max_abs_diff(net.layers[1].w, expected1) <= 1e-8);

  // Parameter accounting: branches contribute (d_I + d_O) * r_eff plus the
  // trainable head.
  const std::size_t head_params = net.head.w.size() + net.head.bias.size();
  const auto& first = reports.front();
  std::size_t expected_params = head_params;
  expected_params += (8 + 12) * first.layers[0].r_eff;
  expected_params += (12 + 10) * first.layers[1].r_eff;
  CHECK(first.trainable_params == expected_params);
}

TEST_CASE("train_task is bit-reproducible") {
  const auto sequence = ifl::gen_task_sequence(bench_spec(2));
  const auto cfg = quick_config(DesignVariant::InfLoRA);

  auto run = [&]() {
    ifl::Rng rng(71);
    Network net = bench_net(rng, sequence.total_classes);
    auto memories = fresh_memories(net);
    for (std::size_t t = 0; t < sequence.tasks.size(); ++t) {
      ifl::train_task(net, memories, sequence.tasks[t], cfg, t + 1,
                      sequence.tasks.size());
    }
    return net;
  };
  const Network a = run();
  const Network b = run();
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    CHECK(a.layers[l].w == b.layers[l].w);
  }
  CHECK(a.head.w == b.head.w);
  CHECK(a.head.bias == b.head.bias);
}

TEST_CASE("train_task validates labels against the class range") {
  const auto sequence = ifl::gen_task_sequence(bench_spec(2));
  ifl::Rng rng(72);
  Network net = bench_net(rng, sequence.total_classes);
  auto memories = fresh_memories(net);
  auto cfg = quick_config(DesignVariant::InfLoRA);

  ifl::TaskData wrong = sequence.tasks[1];
  wrong.classes = sequence.tasks[0].classes;  // labels no longer fit
  CHECK_THROWS_AS(
      ifl::train_task(net, memories, wrong, cfg, 1, sequence.tasks.size()),
      ifl::InvalidInput);
}

TEST_CASE("sequential variant keeps one branch across tasks") {
  const auto sequence = ifl::gen_task_sequence(bench_spec(2));
  ifl::Rng rng(73);
  Network net = bench_net(rng, sequence.total_classes);
  auto memories = fresh_memories(net);
  auto cfg = quick_config(DesignVariant::SeqLoRA);

  ifl::train_task(net, memories, sequence.tasks[0], cfg, 1, 2);
  REQUIRE(net.layers[0].has_branch());
  const Matrix b_after_first = net.layers[0].branch->b;
  const Matrix a_after_first = net.layers[0].branch->a;
  CHECK(a_after_first.max_abs() > 0.0);

  ifl::train_task(net, memories, sequence.tasks[1], cfg, 2, 2);
  REQUIRE(net.layers[0].has_branch());
  CHECK(net.layers[0].branch->b == b_after_first);  // frozen reduction
  CHECK(ifl::max_abs_diff(net.layers[0].branch->a, a_after_first) > 0.0);
  // Memories are untouched by the baseline.
  CHECK(memories[0].basis().cols() == 0);
}

TEST_CASE("exact memory freezes responses along remembered directions") {
  // With eps = 1.0 the memory captures the full input span of each task, so
  // later tasks cannot move old responses: (W_t - W_old) proj_M(h_old) = 0.
  auto spec = bench_spec(3);
  const auto sequence = ifl::gen_task_sequence(spec);
  ifl::Rng rng(74);
  Network net = bench_net(rng, sequence.total_classes);
  auto memories = fresh_memories(net);
  auto cfg = quick_config(DesignVariant::InfLoRA);
  cfg.epsilon = 1.0;

  // Collect layer inputs of task 1 after training it, plus the memory state
  // every later branch must respect.
  std::vector<Matrix> old_inputs;
  std::vector<Matrix> old_weights;
  std::vector<Matrix> guard_basis;
  ifl::train_task(net, memories, sequence.tasks[0], cfg, 1, 3);
  {
    const auto cache = ifl::forward(net, sequence.tasks[0].train.x);
    for (std::size_t l : net.adapted_layer_indices()) {
      old_inputs.push_back(cache.inputs[l]);
      old_weights.push_back(net.layers[l].w);
    }
    for (const auto& memory : memories) {
      guard_basis.push_back(memory.mode() == ifl::MemoryMode::GradSpace
                                ? memory.basis()
                                : ifl::orthonormal_complement(memory.basis()));
    }
  }
  for (std::size_t t = 1; t < 3; ++t) {
    ifl::train_task(net, memories, sequence.tasks[t], cfg, t + 1, 3);
  }
  const auto adapted = net.adapted_layer_indices();
  for (std::size_t a = 0; a < adapted.size(); ++a) {
    const Matrix drift = net.layers[adapted[a]].w - old_weights[a];
    const Matrix protected_component =
        ifl::project_in(guard_basis[a], old_inputs[a]);
    const Matrix moved = drift * protected_component;
    for (std::size_t j = 0; j < moved.cols(); ++j) {
      double norm_sq = 0.0;
      for (std::size_t i = 0; i < moved.rows(); ++i) {
        norm_sq += moved(i, j) * moved(i, j);
      }
      CHECK(std::sqrt(norm_sq) <= 1e-6);
    }
  }
}
