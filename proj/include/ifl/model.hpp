#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "ifl/matrix.hpp"
#include "ifl/rng.hpp"

namespace ifl {

enum class Activation { None, Relu };

// Low-rank branch: e = W h + a b h. `a` starts at zero and is the only
// trainable part; `b` has orthonormal rows and stays frozen.
struct LoraBranch {
  Matrix a;  // out_dim x r_eff
  Matrix b;  // r_eff x in_dim
};

struct LoraLinearLayer {
  Matrix w;     // out_dim x in_dim, frozen once pre-training is done
  Matrix bias;  // out_dim x 1, frozen with w
  Activation activation = Activation::None;
  bool adapted = false;
  std::optional<LoraBranch> branch;

  std::size_t in_dim() const { return w.cols(); }
  std::size_t out_dim() const { return w.rows(); }
  bool has_branch() const { return branch.has_value(); }
  std::size_t branch_rank() const { return branch ? branch->b.rows() : 0; }

  // Installs a fresh branch with zero `a`. The reduction matrix must have
  // orthonormal rows unless the check is explicitly waived (raw-Gaussian
  // fidelity runs).
  void expand_branch(const Matrix& reduction, bool require_orthonormal = true);

  // Folds a b into w and removes the branch.
  void merge_branch();
};

struct LinearHead {
  Matrix w;     // classes x feature_dim, trainable
  Matrix bias;  // classes x 1, trainable
};

struct NetworkDims {
  std::size_t input = 0;
  std::vector<std::size_t> hidden;
  std::size_t feature = 0;
  std::size_t classes = 0;
};

// Feed-forward classifier: hidden layers with ReLU, a linear feature layer
// with no activation, and a plain linear head over all classes.
struct Network {
  NetworkDims dims;
  std::vector<LoraLinearLayer> layers;
  LinearHead head;

  // He-normal backbone init, zero biases, zero head.
  static Network build(const NetworkDims& dims,
                       const std::vector<std::size_t>& adapted_layers,
                       Rng& rng);

  std::size_t layer_count() const { return layers.size(); }
  std::vector<std::size_t> adapted_layer_indices() const;
};

struct ForwardCache {
  std::vector<Matrix> inputs;      // per layer, in_dim x n
  std::vector<Matrix> preacts;     // per layer, out_dim x n
  std::vector<Matrix> branch_mid;  // per layer, b*h when a branch is active
  Matrix features;                 // feature_dim x n
  Matrix logits;                   // classes x n
  std::size_t batch_size = 0;
};

ForwardCache forward(const Network& net, const Matrix& x);

enum class BackwardMode { BranchOnly, FullWeightProbe };

struct LayerGradients {
  Matrix branch_a;  // empty unless the layer has a branch
  Matrix w;         // FullWeightProbe only
  Matrix bias;      // FullWeightProbe only
};

struct Gradients {
  std::vector<LayerGradients> layers;
  Matrix head_w;
  Matrix head_bias;
};

Gradients backward(const Network& net, const ForwardCache& cache,
                   const Matrix& grad_logits, BackwardMode mode);

// Contiguous class id range [lo, hi).
struct ClassRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
  std::size_t count() const { return hi - lo; }
};

struct LossResult {
  double loss = 0.0;
  Matrix grad_logits;
};

// Cross-entropy restricted to the given classes; logits outside the range
// contribute nothing and receive exactly zero gradient. Loss is averaged
// over the batch.
LossResult local_ce_loss(const Matrix& logits, const std::vector<int>& labels,
                         ClassRange task_classes);

enum class OptimizerKind { Sgd, Adam };

struct AdamSlot {
  Matrix m;
  Matrix v;
};

// Single-tensor Adam step (bias-corrected, epsilon outside the square root's
// correction), shared by the continual optimizer and backbone pre-training.
void adam_update(Matrix& param, const Matrix& grad, AdamSlot& slot, long step,
                 double lr, double beta1, double beta2, double epsilon);

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Sgd;
  double learning_rate = 0.01;
  double head_lr_scale = 1.0;  // head steps use learning_rate * this
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<AdamSlot> branch_slots;  // one per layer, sized when branched
  AdamSlot head_w;
  AdamSlot head_bias;

  static OptimizerState sgd(double lr);
  // Moment shapes mirror the network's current trainable parameters.
  static OptimizerState adam(double lr, const Network& net);
};

// Updates branch `a` matrices and the head; w, bias and branch `b` stay
// bit-identical.
void apply_gradients(Network& net, const Gradients& grads,
                     OptimizerState& opt);

}  // namespace ifl
