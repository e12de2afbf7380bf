#include "ifl/inflora.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <string>

#include "ifl/linalg.hpp"
#include "ifl/log.hpp"

namespace ifl {

namespace {

// Task-level stream tags; documented in docs/FORMATS.md.
constexpr std::uint64_t kSampleSelectStream = 1;
constexpr std::uint64_t kEpochShuffleStream = 2;
constexpr std::uint64_t kDesignStreamBase = 10;

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) m(i, j) = rng.normal();
  }
  return m;
}

Matrix random_row_design(Rng& rng, std::size_t rank, std::size_t dim,
                         bool raw_rows) {
  const Matrix draw = gaussian_matrix(rng, rank, dim);
  return raw_rows ? draw : orthonormalize_rows(draw);
}

std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<std::size_t>& indices) {
  std::vector<int> out(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) out[k] = labels[indices[k]];
  return out;
}

}  // namespace

const char* to_string(DesignVariant variant) {
  switch (variant) {
    case DesignVariant::InfLoRA:
      return "InfLoRA";
    case DesignVariant::NtOnly:
      return "NtOnly";
    case DesignVariant::MperpOnly:
      return "MperpOnly";
    case DesignVariant::RandomB:
      return "RandomB";
    case DesignVariant::SeqLoRA:
      return "SeqLoRA";
  }
  return "InfLoRA";
}

bool variant_from_string(const std::string& name, DesignVariant& out) {
  if (name == "InfLoRA") {
    out = DesignVariant::InfLoRA;
  } else if (name == "NtOnly") {
    out = DesignVariant::NtOnly;
  } else if (name == "MperpOnly") {
    out = DesignVariant::MperpOnly;
  } else if (name == "RandomB") {
    out = DesignVariant::RandomB;
  } else if (name == "SeqLoRA") {
    out = DesignVariant::SeqLoRA;
  } else {
    return false;
  }
  return true;
}

Matrix collect_inputs(const Network& net, std::size_t layer_index,
                      const Matrix& batch) {
  if (batch.cols() == 0) throw InvalidInput("collect_inputs: empty sample");
  if (layer_index >= net.layers.size()) {
    throw InvalidInput("collect_inputs: layer index out of range");
  }
  return forward(net, batch).inputs[layer_index];
}

Matrix design_reduction_matrix(const Matrix& inputs,
                               const GradientMemory& memory, std::size_t rank,
                               DesignVariant variant, Rng& rng,
                               bool raw_random_rows) {
  if (rank < 1) throw InvalidInput("design_reduction_matrix: rank must be >= 1");
  const std::size_t dim = memory.ambient_dim();

  if (variant == DesignVariant::RandomB || variant == DesignVariant::SeqLoRA) {
    return random_row_design(rng, std::min(rank, dim), dim, raw_random_rows);
  }

  if (inputs.cols() == 0) {
    throw InvalidInput("design_reduction_matrix: empty input matrix");
  }
  if (inputs.rows() != dim) {
    throw ShapeError("design_reduction_matrix: inputs have " +
                     std::to_string(inputs.rows()) + " rows, ambient is " +
                     std::to_string(dim));
  }

  Matrix candidate = variant == DesignVariant::MperpOnly
                         ? gaussian_matrix(rng, dim, inputs.cols())
                         : inputs;
  if (variant != DesignVariant::NtOnly) {
    candidate = memory.mode() == MemoryMode::GradSpace
                    ? project_out(memory.basis(), candidate)
                    : project_in(memory.basis(), candidate);
  }

  const SvdResult principal = svd(candidate.transposed());
  const std::size_t usable = principal.rank();
  if (usable == 0) {
    throw DegenerateSubspace(
        "design_reduction_matrix: no learning directions remain");
  }
  const std::size_t r_eff = std::min(rank, usable);
  Matrix reduction(r_eff, dim);
  for (std::size_t i = 0; i < r_eff; ++i) {
    for (std::size_t j = 0; j < dim; ++j) reduction(i, j) = principal.vt(i, j);
  }
  return reduction;
}

TaskReport train_task(Network& net, std::vector<GradientMemory>& memories,
                      const TaskData& task, const TaskTrainConfig& cfg,
                      std::size_t task_number, std::size_t total_tasks) {
  const auto started = std::chrono::steady_clock::now();
  if (task_number < 1 || task_number > total_tasks) {
    throw InvalidInput("train_task: task number out of range");
  }
  const auto adapted = net.adapted_layer_indices();
  if (memories.size() != adapted.size()) {
    throw InvalidInput("train_task: expected one memory per adapted layer");
  }
  if (task.classes.hi > net.dims.classes || task.classes.lo >= task.classes.hi) {
    throw InvalidInput("train_task: task class range outside the network head");
  }
  for (int label : task.train.y) {
    if (label < static_cast<int>(task.classes.lo) ||
        label >= static_cast<int>(task.classes.hi)) {
      throw InvalidInput("train_task: training label " + std::to_string(label) +
                         " outside task classes");
    }
  }
  if (task.train.size() == 0) throw InvalidInput("train_task: empty task");

  const Rng task_rng = Rng(cfg.seed).fork(task_number);
  const bool sequential = cfg.variant == DesignVariant::SeqLoRA;

  TaskReport report;
  report.layers.resize(adapted.size());
  for (std::size_t a = 0; a < adapted.size(); ++a) {
    report.layers[a].layer = adapted[a];
    report.layers[a].pre_mode = memories[a].mode();
    report.layers[a].pre_basis = memories[a].basis();
  }

  // One seeded input sample per task, shared between branch design and the
  // memory update.
  std::vector<Matrix> layer_inputs(adapted.size());
  if (!sequential) {
    const std::size_t n_sample =
        std::min(cfg.input_sample_cap, task.train.size());
    std::vector<std::size_t> order(task.train.size());
    std::iota(order.begin(), order.end(), 0);
    Rng select_rng = task_rng.fork(kSampleSelectStream);
    shuffle(order, select_rng);
    order.resize(n_sample);
    const Matrix sample = task.train.x.gather_cols(order);
    const ForwardCache cache = forward(net, sample);
    for (std::size_t a = 0; a < adapted.size(); ++a) {
      layer_inputs[a] = cache.inputs[adapted[a]];
    }
  }

  const bool require_orthonormal =
      !(cfg.raw_random_rows && (cfg.variant == DesignVariant::RandomB ||
                                cfg.variant == DesignVariant::SeqLoRA));
  for (std::size_t a = 0; a < adapted.size(); ++a) {
    LoraLinearLayer& layer = net.layers[adapted[a]];
    if (sequential) {
      // One branch for the whole run, expanded at the first task and tuned
      // across all of them.
      if (task_number == 1) {
        Rng design_rng = task_rng.fork(kDesignStreamBase + adapted[a]);
        layer.expand_branch(
            design_reduction_matrix(layer_inputs[a], memories[a], cfg.rank,
                                    cfg.variant, design_rng,
                                    cfg.raw_random_rows),
            require_orthonormal);
      } else if (!layer.has_branch()) {
        throw StateError("train_task: sequential branch missing after task 1");
      }
      report.layers[a].r_eff = layer.branch_rank();
      continue;
    }
    try {
      Rng design_rng = task_rng.fork(kDesignStreamBase + adapted[a]);
      const Matrix reduction =
          design_reduction_matrix(layer_inputs[a], memories[a], cfg.rank,
                                  cfg.variant, design_rng, cfg.raw_random_rows);
      layer.expand_branch(reduction, require_orthonormal);
    } catch (const DegenerateSubspace&) {
      // No learnable directions left for this layer: carry a rank-0 branch so
      // the task trains head-only here.
      log::warn("task " + std::to_string(task_number) + ": layer " +
                std::to_string(adapted[a]) +
                " has no learning directions left; training head only");
      layer.expand_branch(Matrix(0, layer.in_dim()));
      report.layers[a].degenerate = true;
    }
    report.layers[a].r_eff = layer.branch_rank();
  }

  report.trainable_params =
      net.head.w.size() + net.head.bias.size();
  for (std::size_t l : adapted) {
    const LoraLinearLayer& layer = net.layers[l];
    report.trainable_params +=
        (layer.in_dim() + layer.out_dim()) * layer.branch_rank();
  }

  OptimizerState opt = cfg.optimizer == OptimizerKind::Adam
                           ? OptimizerState::adam(cfg.learning_rate, net)
                           : OptimizerState::sgd(cfg.learning_rate);
  opt.head_lr_scale = cfg.head_lr_scale;
  const ClassRange loss_range =
      cfg.global_ce ? ClassRange{0, net.dims.classes} : task.classes;

  const std::size_t n = task.train.size();
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng = task_rng.fork(kEpochShuffleStream);

  report.epoch_losses.reserve(cfg.epochs);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t begin = 0; begin < n; begin += batch) {
      const std::size_t end = std::min(n, begin + batch);
      const std::vector<std::size_t> chunk(order.begin() + begin,
                                           order.begin() + end);
      const Matrix xb = task.train.x.gather_cols(chunk);
      const std::vector<int> yb = gather_labels(task.train.y, chunk);
      const ForwardCache cache = forward(net, xb);
      const LossResult loss = local_ce_loss(cache.logits, yb, loss_range);
      const Gradients grads =
          backward(net, cache, loss.grad_logits, BackwardMode::BranchOnly);
      apply_gradients(net, grads, opt);
      loss_sum += loss.loss * static_cast<double>(end - begin);
    }
    report.epoch_losses.push_back(loss_sum / static_cast<double>(n));
  }

  if (!sequential) {
    const EpsilonSchedule schedule(cfg.epsilon, total_tasks);
    const double eps_th = epsilon_schedule(schedule, task_number);
    for (std::size_t a = 0; a < adapted.size(); ++a) {
      LoraLinearLayer& layer = net.layers[adapted[a]];
      report.layers[a].increment =
          layer.branch_rank() > 0
              ? layer.branch->a * layer.branch->b
              : Matrix(layer.out_dim(), layer.in_dim());
      layer.merge_branch();
      if (memories[a].mode() == MemoryMode::GradSpace) {
        expand_memory(memories[a], layer_inputs[a], eps_th);
      } else {
        reduce_complement(memories[a], layer_inputs[a], eps_th,
                          cfg.reduction_rule);
      }
      maybe_switch(memories[a]);
    }
  }

  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return report;
}

double proposition1_check(const Network& net, std::size_t layer_index,
                          const Matrix& x, const std::vector<int>& labels,
                          double alpha) {
  if (layer_index >= net.layers.size()) {
    throw InvalidInput("proposition1_check: layer index out of range");
  }
  const LoraLinearLayer& layer = net.layers[layer_index];
  if (!layer.has_branch()) {
    throw StateError("proposition1_check: layer has no active branch");
  }

  const ForwardCache cache = forward(net, x);
  const LossResult loss =
      local_ce_loss(cache.logits, labels, ClassRange{0, net.dims.classes});
  const Gradients grads =
      backward(net, cache, loss.grad_logits, BackwardMode::FullWeightProbe);

  const Matrix& reduction = layer.branch->b;
  // Branch route: -alpha * (dL/dA) * B.
  Matrix via_branch = grads.layers[layer_index].branch_a * reduction;
  via_branch *= -alpha;
  // Full-weight route: (-alpha * dL/dW) * B^T B.
  Matrix via_weight =
      times_transpose(grads.layers[layer_index].w, reduction) * reduction;
  via_weight *= -alpha;

  const double scale = via_weight.frobenius_norm();
  const double difference = (via_branch - via_weight).frobenius_norm();
  if (scale == 0.0) return difference == 0.0 ? 0.0 : difference;
  return difference / scale;
}

}  // namespace ifl
