#include "ifl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ifl/linalg.hpp"

namespace ifl {

namespace {

constexpr double kCovarianceJitter = 1e-6;

std::size_t argmax_lowest(const Matrix& logits, std::size_t column) {
  std::size_t best = 0;
  double best_value = logits(0, column);
  for (std::size_t c = 1; c < logits.rows(); ++c) {
    if (logits(c, column) > best_value) {
      best_value = logits(c, column);
      best = c;
    }
  }
  return best;
}

}  // namespace

void AccuracyMatrix::set_row(std::size_t i, std::vector<double> row) {
  if (i >= rows_.size()) throw InvalidInput("AccuracyMatrix: row out of range");
  if (row.size() != i + 1) {
    throw ShapeError("AccuracyMatrix: row " + std::to_string(i) + " needs " +
                     std::to_string(i + 1) + " entries");
  }
  for (double value : row) {
    if (value < 0.0 || value > 1.0) {
      throw InvalidInput("AccuracyMatrix: accuracy outside [0, 1]");
    }
  }
  rows_[i] = std::move(row);
}

double AccuracyMatrix::at(std::size_t i, std::size_t j) const {
  if (i >= rows_.size() || j > i) {
    throw InvalidInput("AccuracyMatrix: (" + std::to_string(i) + ", " +
                       std::to_string(j) + ") outside the lower triangle");
  }
  if (rows_[i].empty()) {
    throw StateError("AccuracyMatrix: row " + std::to_string(i) + " not set");
  }
  return rows_[i][j];
}

bool AccuracyMatrix::complete() const {
  return std::all_of(rows_.begin(), rows_.end(),
                     [](const auto& row) { return !row.empty(); });
}

std::vector<double> evaluate(const Network& net, const TaskSequence& sequence,
                             std::size_t upto_task) {
  if (upto_task >= sequence.tasks.size()) {
    throw InvalidInput("evaluate: task index out of range");
  }
  std::vector<double> row(upto_task + 1, 0.0);
  for (std::size_t j = 0; j <= upto_task; ++j) {
    const Dataset& test = sequence.tasks[j].test;
    const ForwardCache cache = forward(net, test.x);
    std::size_t correct = 0;
    for (std::size_t s = 0; s < test.size(); ++s) {
      if (argmax_lowest(cache.logits, s) ==
          static_cast<std::size_t>(test.y[s])) {
        ++correct;
      }
    }
    row[j] = static_cast<double>(correct) / static_cast<double>(test.size());
  }
  return row;
}

AccSummary acc_metrics(const AccuracyMatrix& matrix) {
  if (!matrix.complete()) {
    throw StateError("acc_metrics: accuracy matrix is incomplete");
  }
  AccSummary summary;
  const std::size_t tasks = matrix.tasks();
  summary.per_task.resize(tasks);
  for (std::size_t i = 0; i < tasks; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j <= i; ++j) sum += matrix.at(i, j);
    summary.per_task[i] = sum / static_cast<double>(i + 1);
  }
  summary.averaged =
      std::accumulate(summary.per_task.begin(), summary.per_task.end(), 0.0) /
      static_cast<double>(tasks);
  summary.final_acc = summary.per_task.back();
  return summary;
}

std::size_t param_count(const NetworkDims& dims, std::size_t rank,
                        const std::vector<std::size_t>& adapted_layers) {
  std::vector<std::size_t> widths;
  widths.push_back(dims.input);
  for (std::size_t h : dims.hidden) widths.push_back(h);
  widths.push_back(dims.feature);

  std::size_t total = 0;
  for (std::size_t l : adapted_layers) {
    if (l + 1 >= widths.size()) {
      throw InvalidInput("param_count: adapted layer index out of range");
    }
    total += (widths[l] + widths[l + 1]) * rank;
  }
  return total;
}

ClassStats collect_stats(const Network& net, const Dataset& data) {
  if (data.size() == 0) throw InvalidInput("collect_stats: empty dataset");
  const ForwardCache cache = forward(net, data.x);
  const Matrix& features = cache.features;
  const std::size_t dim = features.rows();

  std::map<int, std::vector<std::size_t>> samples_by_class;
  for (std::size_t s = 0; s < data.size(); ++s) {
    samples_by_class[data.y[s]].push_back(s);
  }

  ClassStats stats;
  for (const auto& [label, samples] : samples_by_class) {
    if (samples.size() < 2) {
      throw InvalidInput("collect_stats: class " + std::to_string(label) +
                         " has fewer than two samples");
    }
    ClassStats::Entry entry;
    entry.count = samples.size();
    entry.mean = Matrix(dim, 1);
    for (std::size_t s : samples) {
      for (std::size_t i = 0; i < dim; ++i) {
        entry.mean(i, 0) += features(i, s);
      }
    }
    entry.mean *= 1.0 / static_cast<double>(samples.size());

    entry.covariance = Matrix(dim, dim);
    for (std::size_t s : samples) {
      for (std::size_t i = 0; i < dim; ++i) {
        const double di = features(i, s) - entry.mean(i, 0);
        for (std::size_t j = 0; j <= i; ++j) {
          const double dj = features(j, s) - entry.mean(j, 0);
          entry.covariance(i, j) += di * dj;
        }
      }
    }
    const double scale = 1.0 / static_cast<double>(samples.size() - 1);
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        entry.covariance(i, j) *= scale;
        entry.covariance(j, i) = entry.covariance(i, j);
      }
      entry.covariance(i, i) += kCovarianceJitter;
    }
    stats.per_class[label] = std::move(entry);
  }
  return stats;
}

void align_classifier(Network& net, const ClassStats& stats,
                      const AlignConfig& cfg, Rng& rng) {
  if (stats.per_class.empty()) {
    throw InvalidInput("align_classifier: no class statistics");
  }
  const std::size_t dim = net.dims.feature;

  // Seen classes must form a contiguous id range so the masked loss applies.
  const int lo = stats.per_class.begin()->first;
  const int hi = stats.per_class.rbegin()->first + 1;
  if (lo < 0 || static_cast<std::size_t>(hi) > net.dims.classes ||
      stats.per_class.size() != static_cast<std::size_t>(hi - lo)) {
    throw InvalidInput("align_classifier: seen classes must be contiguous");
  }

  const std::size_t total =
      cfg.samples_per_class * stats.per_class.size();
  Matrix features(dim, total);
  std::vector<int> labels(total);
  std::size_t column = 0;
  for (const auto& [label, entry] : stats.per_class) {
    Matrix factor;
    try {
      factor = cholesky(entry.covariance);
    } catch (const NumericalFailure&) {
      throw NumericalFailure("align_classifier: covariance of class " +
                             std::to_string(label) +
                             " is not positive definite");
    }
    for (std::size_t s = 0; s < cfg.samples_per_class; ++s) {
      Matrix z(dim, 1);
      for (std::size_t i = 0; i < dim; ++i) z(i, 0) = rng.normal();
      const Matrix sample = entry.mean + factor * z;
      for (std::size_t i = 0; i < dim; ++i) features(i, column) = sample(i, 0);
      labels[column] = label;
      ++column;
    }
  }

  const ClassRange seen{static_cast<std::size_t>(lo),
                        static_cast<std::size_t>(hi)};
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t begin = 0; begin < total; begin += batch) {
      const std::size_t end = std::min(total, begin + batch);
      const std::vector<std::size_t> chunk(order.begin() + begin,
                                           order.begin() + end);
      const Matrix xb = features.gather_cols(chunk);
      std::vector<int> yb(chunk.size());
      for (std::size_t k = 0; k < chunk.size(); ++k) yb[k] = labels[chunk[k]];

      Matrix logits = net.head.w * xb;
      for (std::size_t i = 0; i < logits.rows(); ++i) {
        for (std::size_t j = 0; j < logits.cols(); ++j) {
          logits(i, j) += net.head.bias(i, 0);
        }
      }
      const LossResult loss = local_ce_loss(logits, yb, seen);
      Matrix grad_w = times_transpose(loss.grad_logits, xb);
      grad_w *= cfg.learning_rate;
      net.head.w -= grad_w;
      Matrix grad_b(net.head.bias.rows(), 1);
      for (std::size_t i = 0; i < grad_b.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < loss.grad_logits.cols(); ++j) {
          sum += loss.grad_logits(i, j);
        }
        grad_b(i, 0) = sum;
      }
      grad_b *= cfg.learning_rate;
      net.head.bias -= grad_b;
    }
  }
}

}  // namespace ifl
