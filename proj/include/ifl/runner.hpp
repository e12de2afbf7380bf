#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ifl/config.hpp"
#include "ifl/eval.hpp"
#include "ifl/inflora.hpp"
#include "ifl/model.hpp"

namespace ifl {

struct VariantResult {
  DesignVariant variant;
  AccuracyMatrix matrix;
  AccSummary summary;
  std::size_t expanded_params = 0;
  std::vector<TaskReport> tasks;

  VariantResult(DesignVariant v, std::size_t task_count)
      : variant(v), matrix(task_count) {}
};

struct RunReport {
  std::uint64_t seed = 0;
  std::vector<VariantResult> variants;
  Network pretrained_backbone;  // frozen state shared by every variant
  double pretrain_accuracy = 0.0;
  double seconds = 0.0;
};

// Pre-trains one backbone for cfg.seed, then runs every configured variant
// on a clone of it through the full task sequence.
RunReport run_experiment(const ExperimentConfig& cfg);

// results.csv, summary.csv, losses.csv and config_echo.json under out_dir,
// plus one pretrained checkpoint per seed. Deterministic bytes; writes are
// atomic.
void write_run_outputs(const ExperimentConfig& cfg,
                       const std::vector<RunReport>& reports,
                       const std::string& out_dir);

struct SweepPoint {
  double value = 0.0;
  std::vector<RunReport> reports;  // one per seed
};

// Re-runs the experiment with `parameter` in {"r", "eps"} swept over the
// given values. Duplicates are dropped with a warning.
std::vector<SweepPoint> sweep(const ExperimentConfig& cfg,
                              const std::string& parameter,
                              const std::vector<double>& values,
                              const std::vector<std::uint64_t>& seeds);

void write_sweep_outputs(const std::string& parameter,
                         const std::vector<SweepPoint>& points,
                         const std::string& out_dir);

struct CheckResult {
  std::string name;
  double tolerance = 0.0;
  double observed = 0.0;
  bool pass = false;
};

// Fixed-seed invariant suite over every module; `inflora check` prints one
// line per property.
std::vector<CheckResult> check_suite();

}  // namespace ifl
