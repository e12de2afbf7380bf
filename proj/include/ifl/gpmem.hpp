#pragma once

#include <cstddef>

#include "ifl/matrix.hpp"

namespace ifl {

enum class MemoryMode { GradSpace, Complement };

// Which directions to strip from the complement after a task. The residual
// rule removes the fewest leading principal directions that leave at most
// (1 - eps_th) of the input energy inside the complement. The as-written rule
// instead keeps removing while the removed energy stays within that budget,
// which can remove nothing when the leading direction is strong; it is kept
// selectable for comparison runs.
enum class ReductionRule { Residual, AsWritten };

// Per-layer memory of the old-task gradient space: either an orthonormal
// basis of that space itself (GradSpace) or of its orthogonal complement.
class GradientMemory {
 public:
  explicit GradientMemory(std::size_t ambient_dim)
      : mode_(MemoryMode::GradSpace), basis_(ambient_dim, 0),
        ambient_(ambient_dim) {}
  GradientMemory(MemoryMode mode, Matrix basis);

  MemoryMode mode() const { return mode_; }
  const Matrix& basis() const { return basis_; }
  std::size_t ambient_dim() const { return ambient_; }

  // Dimension of the tracked old-task gradient space.
  std::size_t grad_space_dim() const {
    return mode_ == MemoryMode::GradSpace ? basis_.cols()
                                          : ambient_ - basis_.cols();
  }
  std::size_t complement_dim() const { return ambient_ - grad_space_dim(); }

  friend void expand_memory(GradientMemory& memory, const Matrix& inputs,
                            double eps_th);
  friend void maybe_switch(GradientMemory& memory);
  friend void reduce_complement(GradientMemory& memory, const Matrix& inputs,
                                double eps_th, ReductionRule rule);

 private:
  MemoryMode mode_;
  Matrix basis_;
  std::size_t ambient_;
};

// Energy-capture threshold schedule: eps_th(t) = eps + (1 - eps) * t / T.
struct EpsilonSchedule {
  double base = 1.0;     // eps in (0, 1]
  std::size_t tasks = 1;  // T

  EpsilonSchedule(double base_epsilon, std::size_t total_tasks);
};

double epsilon_schedule(const EpsilonSchedule& schedule, std::size_t task);

// Appends the minimal number of leading principal directions of the inputs'
// component outside the current basis so that the captured energy reaches
// eps_th of the total. GradSpace mode only.
void expand_memory(GradientMemory& memory, const Matrix& inputs,
                   double eps_th);

// Switches storage to the complement basis once the gradient space occupies
// more than half the ambient dimensions; one-way.
void maybe_switch(GradientMemory& memory);

// Removes the directions of the complement that carry the new task's
// gradient energy. Complement mode only.
void reduce_complement(GradientMemory& memory, const Matrix& inputs,
                       double eps_th,
                       ReductionRule rule = ReductionRule::Residual);

}  // namespace ifl
