#include "ifl/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ifl/linalg.hpp"

namespace ifl {

namespace {

void add_bias(Matrix& z, const Matrix& bias) {
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const double b = bias(i, 0);
    double* row = z.row_ptr(i);
    for (std::size_t j = 0; j < z.cols(); ++j) row[j] += b;
  }
}

Matrix relu(const Matrix& z) {
  Matrix out = z;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    double* row = out.row_ptr(i);
    for (std::size_t j = 0; j < out.cols(); ++j) {
      if (row[j] < 0.0) row[j] = 0.0;
    }
  }
  return out;
}

// Gradients vanish at non-positive pre-activations.
void apply_relu_mask(Matrix& delta, const Matrix& preact) {
  for (std::size_t i = 0; i < delta.rows(); ++i) {
    double* d = delta.row_ptr(i);
    const double* z = preact.row_ptr(i);
    for (std::size_t j = 0; j < delta.cols(); ++j) {
      if (z[j] <= 0.0) d[j] = 0.0;
    }
  }
}

Matrix row_sums(const Matrix& m) {
  Matrix out(m.rows(), 1);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double sum = 0.0;
    const double* row = m.row_ptr(i);
    for (std::size_t j = 0; j < m.cols(); ++j) sum += row[j];
    out(i, 0) = sum;
  }
  return out;
}

void require_shape(const Matrix& got, std::size_t rows, std::size_t cols,
                   const char* what) {
  if (got.rows() != rows || got.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(rows) +
                     "x" + std::to_string(cols) + ", got " +
                     std::to_string(got.rows()) + "x" +
                     std::to_string(got.cols()));
  }
}

}  // namespace

void LoraLinearLayer::expand_branch(const Matrix& reduction,
                                    bool require_orthonormal) {
  if (branch.has_value()) {
    throw StateError("expand_branch: layer already has an active branch");
  }
  if (reduction.cols() != in_dim()) {
    throw ShapeError("expand_branch: reduction matrix has " +
                     std::to_string(reduction.cols()) + " columns, layer input is " +
                     std::to_string(in_dim()));
  }
  if (require_orthonormal &&
      orthonormal_defect_rows(reduction) > kOrthonormalTolerance) {
    throw InvalidInput("expand_branch: reduction rows not orthonormal");
  }
  branch = LoraBranch{Matrix(out_dim(), reduction.rows()), reduction};
}

void LoraLinearLayer::merge_branch() {
  if (!branch.has_value()) {
    throw StateError("merge_branch: no active branch");
  }
  if (branch->b.rows() > 0) {
    w += branch->a * branch->b;
  }
  branch.reset();
}

Network Network::build(const NetworkDims& dims,
                       const std::vector<std::size_t>& adapted_layers,
                       Rng& rng) {
  if (dims.input == 0 || dims.feature == 0 || dims.classes == 0) {
    throw InvalidInput("Network::build: dimensions must be positive");
  }
  Network net;
  net.dims = dims;
  std::vector<std::size_t> widths;
  widths.push_back(dims.input);
  for (std::size_t h : dims.hidden) widths.push_back(h);
  widths.push_back(dims.feature);

  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    LoraLinearLayer layer;
    const std::size_t fan_in = widths[l];
    const std::size_t fan_out = widths[l + 1];
    layer.w = Matrix(fan_out, fan_in);
    const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < fan_out; ++i) {
      for (std::size_t j = 0; j < fan_in; ++j) {
        layer.w(i, j) = rng.normal() * scale;
      }
    }
    layer.bias = Matrix(fan_out, 1);
    // All hidden layers use ReLU; the feature layer stays linear.
    layer.activation =
        (l + 2 < widths.size()) ? Activation::Relu : Activation::None;
    net.layers.push_back(std::move(layer));
  }
  for (std::size_t idx : adapted_layers) {
    if (idx >= net.layers.size()) {
      throw InvalidInput("Network::build: adapted layer index out of range");
    }
    net.layers[idx].adapted = true;
  }
  net.head.w = Matrix(dims.classes, dims.feature);
  net.head.bias = Matrix(dims.classes, 1);
  return net;
}

std::vector<std::size_t> Network::adapted_layer_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].adapted) out.push_back(l);
  }
  return out;
}

ForwardCache forward(const Network& net, const Matrix& x) {
  if (x.cols() == 0) throw InvalidInput("forward: empty batch");
  if (x.rows() != net.dims.input) {
    throw ShapeError("forward: input has " + std::to_string(x.rows()) +
                     " rows, network expects " + std::to_string(net.dims.input));
  }
  ForwardCache cache;
  cache.batch_size = x.cols();
  cache.inputs.reserve(net.layers.size());
  cache.preacts.reserve(net.layers.size());
  cache.branch_mid.resize(net.layers.size());

  Matrix h = x;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const LoraLinearLayer& layer = net.layers[l];
    cache.inputs.push_back(h);
    Matrix z = layer.w * h;
    add_bias(z, layer.bias);
    if (layer.has_branch() && layer.branch_rank() > 0) {
      Matrix mid = layer.branch->b * h;
      z += layer.branch->a * mid;
      cache.branch_mid[l] = std::move(mid);
    }
    cache.preacts.push_back(z);
    h = layer.activation == Activation::Relu ? relu(z) : std::move(z);
  }
  cache.features = h;
  cache.logits = net.head.w * h;
  add_bias(cache.logits, net.head.bias);
  return cache;
}

Gradients backward(const Network& net, const ForwardCache& cache,
                   const Matrix& grad_logits, BackwardMode mode) {
  if (cache.inputs.size() != net.layers.size()) {
    throw StateError("backward: cache does not match network");
  }
  require_shape(grad_logits, net.dims.classes, cache.batch_size,
                "backward: grad_logits");

  Gradients grads;
  grads.layers.resize(net.layers.size());
  grads.head_w = times_transpose(grad_logits, cache.features);
  grads.head_bias = row_sums(grad_logits);

  Matrix delta = transpose_times(net.head.w, grad_logits);
  for (std::size_t l = net.layers.size(); l-- > 0;) {
    const LoraLinearLayer& layer = net.layers[l];
    if (layer.activation == Activation::Relu) {
      apply_relu_mask(delta, cache.preacts[l]);
    }
    if (mode == BackwardMode::FullWeightProbe) {
      grads.layers[l].w = times_transpose(delta, cache.inputs[l]);
      grads.layers[l].bias = row_sums(delta);
    }
    if (layer.has_branch()) {
      if (layer.branch_rank() > 0) {
        grads.layers[l].branch_a = times_transpose(delta, cache.branch_mid[l]);
      } else {
        grads.layers[l].branch_a = Matrix(layer.out_dim(), 0);
      }
    } else if (layer.adapted && mode == BackwardMode::BranchOnly) {
      throw StateError("backward: adapted layer " + std::to_string(l) +
                       " has no branch");
    }
    if (l > 0) {
      Matrix prev = transpose_times(layer.w, delta);
      if (layer.has_branch() && layer.branch_rank() > 0) {
        prev += transpose_times(layer.branch->b,
                                transpose_times(layer.branch->a, delta));
      }
      delta = std::move(prev);
    }
  }
  return grads;
}

LossResult local_ce_loss(const Matrix& logits, const std::vector<int>& labels,
                         ClassRange task_classes) {
  const std::size_t n = logits.cols();
  if (labels.size() != n) {
    throw ShapeError("local_ce_loss: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(n) + " samples");
  }
  if (task_classes.lo >= task_classes.hi || task_classes.hi > logits.rows()) {
    throw InvalidInput("local_ce_loss: bad class range");
  }
  LossResult result;
  result.grad_logits = Matrix(logits.rows(), n);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const int label = labels[j];
    if (label < static_cast<int>(task_classes.lo) ||
        label >= static_cast<int>(task_classes.hi)) {
      throw InvalidInput("local_ce_loss: label " + std::to_string(label) +
                         " outside task classes");
    }
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t c = task_classes.lo; c < task_classes.hi; ++c) {
      max_logit = std::max(max_logit, logits(c, j));
    }
    double sum = 0.0;
    for (std::size_t c = task_classes.lo; c < task_classes.hi; ++c) {
      sum += std::exp(logits(c, j) - max_logit);
    }
    total += std::log(sum) + max_logit - logits(static_cast<std::size_t>(label), j);
    for (std::size_t c = task_classes.lo; c < task_classes.hi; ++c) {
      const double p = std::exp(logits(c, j) - max_logit) / sum;
      const double indicator = c == static_cast<std::size_t>(label) ? 1.0 : 0.0;
      result.grad_logits(c, j) = (p - indicator) * inv_n;
    }
  }
  result.loss = total * inv_n;
  return result;
}

void adam_update(Matrix& param, const Matrix& grad, AdamSlot& slot, long step,
                 double lr, double beta1, double beta2, double epsilon) {
  if (slot.m.rows() != param.rows() || slot.m.cols() != param.cols()) {
    throw ShapeError("adam_update: moment shape does not match parameter");
  }
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.rows(); ++i) {
    double* p = param.row_ptr(i);
    double* m = slot.m.row_ptr(i);
    double* v = slot.v.row_ptr(i);
    const double* g = grad.row_ptr(i);
    for (std::size_t j = 0; j < param.cols(); ++j) {
      m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
      v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= lr * m_hat / (std::sqrt(v_hat) + epsilon);
    }
  }
}

OptimizerState OptimizerState::sgd(double lr) {
  OptimizerState state;
  state.kind = OptimizerKind::Sgd;
  state.learning_rate = lr;
  return state;
}

OptimizerState OptimizerState::adam(double lr, const Network& net) {
  OptimizerState state;
  state.kind = OptimizerKind::Adam;
  state.learning_rate = lr;
  state.branch_slots.resize(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (net.layers[l].has_branch()) {
      const Matrix& a = net.layers[l].branch->a;
      state.branch_slots[l] = {Matrix(a.rows(), a.cols()),
                               Matrix(a.rows(), a.cols())};
    }
  }
  state.head_w = {Matrix(net.head.w.rows(), net.head.w.cols()),
                  Matrix(net.head.w.rows(), net.head.w.cols())};
  state.head_bias = {Matrix(net.head.bias.rows(), 1),
                     Matrix(net.head.bias.rows(), 1)};
  return state;
}

void apply_gradients(Network& net, const Gradients& grads,
                     OptimizerState& opt) {
  if (grads.layers.size() != net.layers.size()) {
    throw ShapeError("apply_gradients: gradient/layer count mismatch");
  }
  require_shape(grads.head_w, net.head.w.rows(), net.head.w.cols(),
                "apply_gradients: head_w");
  require_shape(grads.head_bias, net.head.bias.rows(), 1,
                "apply_gradients: head_bias");
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (net.layers[l].has_branch() && net.layers[l].branch_rank() > 0) {
      const Matrix& a = net.layers[l].branch->a;
      require_shape(grads.layers[l].branch_a, a.rows(), a.cols(),
                    "apply_gradients: branch_a");
    }
  }

  const double head_lr = opt.learning_rate * opt.head_lr_scale;
  if (opt.kind == OptimizerKind::Sgd) {
    const double lr = opt.learning_rate;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      if (net.layers[l].has_branch() && net.layers[l].branch_rank() > 0) {
        Matrix scaled = grads.layers[l].branch_a;
        scaled *= lr;
        net.layers[l].branch->a -= scaled;
      }
    }
    Matrix hw = grads.head_w;
    hw *= head_lr;
    net.head.w -= hw;
    Matrix hb = grads.head_bias;
    hb *= head_lr;
    net.head.bias -= hb;
    ++opt.step;
    return;
  }

  ++opt.step;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (net.layers[l].has_branch() && net.layers[l].branch_rank() > 0) {
      adam_update(net.layers[l].branch->a, grads.layers[l].branch_a,
                  opt.branch_slots[l], opt.step, opt.learning_rate, opt.beta1,
                  opt.beta2, opt.epsilon);
    }
  }
  adam_update(net.head.w, grads.head_w, opt.head_w, opt.step, head_lr,
              opt.beta1, opt.beta2, opt.epsilon);
  adam_update(net.head.bias, grads.head_bias, opt.head_bias, opt.step, head_lr,
              opt.beta1, opt.beta2, opt.epsilon);
}

}  // namespace ifl
