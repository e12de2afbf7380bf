#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "ifl/data.hpp"
#include "ifl/matrix.hpp"
#include "ifl/model.hpp"
#include "ifl/rng.hpp"

namespace ifl {

// Lower-triangular accuracy record: row i holds the accuracy on every task
// j <= i measured after learning task i. Indices are 0-based here; reports
// print them 1-based.
class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(std::size_t tasks) : rows_(tasks) {}

  std::size_t tasks() const { return rows_.size(); }
  void set_row(std::size_t i, std::vector<double> row);
  bool row_filled(std::size_t i) const { return !rows_[i].empty(); }
  double at(std::size_t i, std::size_t j) const;
  bool complete() const;

 private:
  std::vector<std::vector<double>> rows_;
};

// Accuracy of the network on every task j <= upto_task, argmax over all
// class logits (ties resolved to the lowest class id).
std::vector<double> evaluate(const Network& net, const TaskSequence& sequence,
                             std::size_t upto_task);

struct AccSummary {
  std::vector<double> per_task;  // ACC_i, mean of row i
  double averaged = 0.0;         // mean of ACC_i over i
  double final_acc = 0.0;        // ACC_T
};

AccSummary acc_metrics(const AccuracyMatrix& matrix);

// Parameters expanded by one branch per adapted layer: sum of (d_I + d_O) * r.
std::size_t param_count(const NetworkDims& dims, std::size_t rank,
                        const std::vector<std::size_t>& adapted_layers);

struct ClassStats {
  struct Entry {
    Matrix mean;        // feature_dim x 1
    Matrix covariance;  // feature_dim x feature_dim, jittered PSD
    std::size_t count = 0;
  };
  std::map<int, Entry> per_class;
};

// Per-class mean and unbiased covariance of the backbone features, with a
// 1e-6 diagonal jitter. Classes need at least two samples.
ClassStats collect_stats(const Network& net, const Dataset& data);

struct AlignConfig {
  std::size_t samples_per_class = 64;
  std::size_t epochs = 10;
  double learning_rate = 0.01;
  std::size_t batch_size = 128;
};

// Retrains only the head on features sampled from the stored per-class
// Gaussians, cross-entropy over all seen classes. Backbone and branches are
// untouched.
void align_classifier(Network& net, const ClassStats& stats,
                      const AlignConfig& cfg, Rng& rng);

}  // namespace ifl
