#include "ifl/gpmem.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "ifl/linalg.hpp"

namespace ifl {

namespace {

void require_inputs(const GradientMemory& memory, const Matrix& inputs,
                    const char* what) {
  if (inputs.cols() == 0) {
    throw InvalidInput(std::string(what) + ": empty input sample");
  }
  if (inputs.rows() != memory.ambient_dim()) {
    throw ShapeError(std::string(what) + ": inputs have " +
                     std::to_string(inputs.rows()) + " rows, memory ambient is " +
                     std::to_string(memory.ambient_dim()));
  }
  inputs.require_finite(what);
}

void require_threshold(double eps_th, const char* what) {
  if (!(eps_th > 0.0) || eps_th > 1.0) {
    throw InvalidInput(std::string(what) + ": eps_th must lie in (0, 1]");
  }
}

// First k left singular directions as a matrix.
Matrix leading_directions(const SvdResult& decomposition, std::size_t k) {
  Matrix out(decomposition.u.rows(), k);
  for (std::size_t j = 0; j < k; ++j) {
    for (std::size_t i = 0; i < out.rows(); ++i) {
      out(i, j) = decomposition.u(i, j);
    }
  }
  return out;
}

}  // namespace

GradientMemory::GradientMemory(MemoryMode mode, Matrix basis)
    : mode_(mode), basis_(std::move(basis)), ambient_(basis_.rows()) {
  if (orthonormal_defect(basis_) > kOrthonormalTolerance) {
    throw InvalidInput("GradientMemory: basis columns not orthonormal");
  }
}

EpsilonSchedule::EpsilonSchedule(double base_epsilon, std::size_t total_tasks)
    : base(base_epsilon), tasks(total_tasks) {
  if (!(base > 0.0) || base > 1.0) {
    throw InvalidInput("EpsilonSchedule: base must lie in (0, 1]");
  }
  if (tasks == 0) {
    throw InvalidInput("EpsilonSchedule: task count must be positive");
  }
}

double epsilon_schedule(const EpsilonSchedule& schedule, std::size_t task) {
  if (task < 1 || task > schedule.tasks) {
    throw InvalidInput("epsilon_schedule: task " + std::to_string(task) +
                       " outside 1.." + std::to_string(schedule.tasks));
  }
  return schedule.base + (1.0 - schedule.base) * static_cast<double>(task) /
                             static_cast<double>(schedule.tasks);
}

void expand_memory(GradientMemory& memory, const Matrix& inputs,
                   double eps_th) {
  if (memory.mode_ != MemoryMode::GradSpace) {
    throw StateError("expand_memory: memory is in complement mode");
  }
  require_inputs(memory, inputs, "expand_memory");
  require_threshold(eps_th, "expand_memory");

  const double total_sq = inputs.squared_frobenius_norm();
  if (total_sq == 0.0) return;

  const Matrix outside = project_out(memory.basis_, inputs);
  const double captured_sq =
      std::max(0.0, total_sq - outside.squared_frobenius_norm());

  const SvdResult decomposition = svd(outside);
  const std::size_t max_new = decomposition.rank();

  std::size_t added = max_new;
  double running = captured_sq;
  for (std::size_t u = 0; u <= max_new; ++u) {
    if (running >= eps_th * total_sq) {
      added = u;
      break;
    }
    if (u < max_new) running += decomposition.s[u] * decomposition.s[u];
  }
  if (added == 0) return;

  // Re-orthogonalize against the stored basis before appending; the SVD
  // directions are orthogonal to it up to projection roundoff only.
  Matrix appended = memory.basis_;
  for (std::size_t j = 0; j < added; ++j) {
    Matrix column(decomposition.u.rows(), 1);
    for (std::size_t i = 0; i < column.rows(); ++i) {
      column(i, 0) = decomposition.u(i, j);
    }
    for (int pass = 0; pass < 2; ++pass) {
      const Matrix overlap = transpose_times(appended, column);
      column -= appended * overlap;
    }
    const double norm = column.frobenius_norm();
    if (norm <= 0.0) continue;
    column *= 1.0 / norm;
    appended.append_cols(column);
  }
  memory.basis_ = std::move(appended);
}

void maybe_switch(GradientMemory& memory) {
  if (memory.mode_ != MemoryMode::GradSpace) return;
  const std::size_t k = memory.basis_.cols();
  if (k <= memory.ambient_ - k) return;
  memory.basis_ = orthonormal_complement(memory.basis_);
  memory.mode_ = MemoryMode::Complement;
}

void reduce_complement(GradientMemory& memory, const Matrix& inputs,
                       double eps_th, ReductionRule rule) {
  if (memory.mode_ != MemoryMode::Complement) {
    throw StateError("reduce_complement: memory is in gradient-space mode");
  }
  require_inputs(memory, inputs, "reduce_complement");
  require_threshold(eps_th, "reduce_complement");
  if (memory.basis_.cols() == 0) return;

  const Matrix inside = project_in(memory.basis_, inputs);
  const double total_sq = inputs.squared_frobenius_norm();
  const double inside_sq = inside.squared_frobenius_norm();
  const double budget = (1.0 - eps_th) * total_sq;
  if (inside_sq == 0.0) return;

  const SvdResult decomposition = svd(inside);
  const std::size_t rank = decomposition.rank();

  std::size_t removed = 0;
  if (rule == ReductionRule::Residual) {
    removed = rank;
    double residual = 0.0;
    for (double s : decomposition.s) residual += s * s;
    for (std::size_t k = 0; k <= rank; ++k) {
      if (residual <= budget) {
        removed = k;
        break;
      }
      if (k < rank) residual -= decomposition.s[k] * decomposition.s[k];
    }
  } else {
    double taken = 0.0;
    for (std::size_t k = 0; k < rank; ++k) {
      taken += decomposition.s[k] * decomposition.s[k];
      if (taken > budget) break;
      removed = k + 1;
    }
  }
  if (removed == 0) return;

  const Matrix stripped = leading_directions(decomposition, removed);
  Matrix reduced = memory.basis_ - stripped * transpose_times(stripped, memory.basis_);
  const SvdResult cleanup = svd(reduced);
  memory.basis_ = leading_directions(cleanup, cleanup.rank());
}

}  // namespace ifl
