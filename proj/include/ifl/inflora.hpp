#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ifl/data.hpp"
#include "ifl/gpmem.hpp"
#include "ifl/matrix.hpp"
#include "ifl/model.hpp"
#include "ifl/rng.hpp"

namespace ifl {

// How the per-task reduction matrix is built. InfLoRA intersects the new
// task's input span with the complement of the old-task gradient space;
// the others are the ablation arms and the sequential-LoRA baseline.
enum class DesignVariant { InfLoRA, NtOnly, MperpOnly, RandomB, SeqLoRA };

const char* to_string(DesignVariant variant);
bool variant_from_string(const std::string& name, DesignVariant& out);

struct TaskTrainConfig {
  std::size_t rank = 10;
  std::size_t epochs = 20;
  std::size_t batch_size = 128;
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 1e-3;
  double head_lr_scale = 1.0;
  double epsilon = 0.95;  // schedule base for the memory threshold
  DesignVariant variant = DesignVariant::InfLoRA;
  std::uint64_t seed = 1;
  bool raw_random_rows = false;  // skip row orthonormalization (fidelity runs)
  ReductionRule reduction_rule = ReductionRule::Residual;
  bool global_ce = false;  // unmasked cross-entropy over every class
  std::size_t input_sample_cap = 512;
};

// Input batch reaching the given layer, one column per sample.
Matrix collect_inputs(const Network& net, std::size_t layer_index,
                      const Matrix& batch);

// Builds the frozen reduction matrix for one layer-task pair. Throws
// DegenerateSubspace when no usable direction remains.
Matrix design_reduction_matrix(const Matrix& inputs,
                               const GradientMemory& memory, std::size_t rank,
                               DesignVariant variant, Rng& rng,
                               bool raw_random_rows = false);

struct LayerTaskRecord {
  std::size_t layer = 0;
  std::size_t r_eff = 0;
  bool degenerate = false;
  Matrix increment;     // composed-weight change A_t B_t merged after the task
  MemoryMode pre_mode;  // memory state when the branch was designed
  Matrix pre_basis;
};

struct TaskReport {
  std::vector<double> epoch_losses;
  double seconds = 0.0;
  std::size_t trainable_params = 0;
  std::vector<LayerTaskRecord> layers;  // one entry per adapted layer
};

// Runs one task end to end: collect inputs, design and expand branches,
// optimize with the task-local loss, merge, and update the memories.
// `memories` holds one entry per adapted layer, in layer order.
TaskReport train_task(Network& net, std::vector<GradientMemory>& memories,
                      const TaskData& task, const TaskTrainConfig& cfg,
                      std::size_t task_number, std::size_t total_tasks);

// Relative Frobenius deviation between the composed-weight change of one
// branch SGD step and the projected full-weight step it must equal.
double proposition1_check(const Network& net, std::size_t layer_index,
                          const Matrix& x, const std::vector<int>& labels,
                          double alpha);

}  // namespace ifl
