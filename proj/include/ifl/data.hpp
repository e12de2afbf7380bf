#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ifl/matrix.hpp"
#include "ifl/model.hpp"

namespace ifl {

enum class Generator { GaussianBlobs, RotatedBlobs, PermutedFeatures };

const char* to_string(Generator generator);
bool generator_from_string(const std::string& name, Generator& out);

// Deterministic synthetic class-incremental benchmark description. The
// defaults are the desk-scale benchmark used throughout the test suites.
struct TaskSpec {
  std::size_t tasks = 5;
  std::size_t classes_per_task = 4;
  std::size_t train_per_class = 500;
  std::size_t test_per_class = 200;
  std::size_t input_dim = 32;
  Generator generator = Generator::GaussianBlobs;
  double separation = 4.0;  // radius of the class-mean hypersphere
  double noise = 1.0;
  std::uint64_t seed = 1;
  std::size_t base_classes = 8;  // pre-training classes, never in the stream
};

struct Dataset {
  Matrix x;            // input_dim x n, columns are samples
  std::vector<int> y;  // n labels

  std::size_t size() const { return y.size(); }
};

struct TaskData {
  Dataset train;
  Dataset test;
  ClassRange classes;
};

struct TaskSequence {
  std::vector<TaskData> tasks;
  Dataset base_train;  // pre-training split, class ids local to itself
  Dataset base_test;
  std::size_t total_classes = 0;
  std::size_t input_dim = 0;
};

TaskSequence gen_task_sequence(const TaskSpec& spec);

struct CsvSchema {
  std::vector<std::string> feature_columns;
  std::string label_column;
};

// Header row, comma separated, UTF-8, decimal-point reals, integer labels.
// Row/column numbers in errors are 1-based over data rows / file columns.
Dataset load_csv(const std::string& path, const CsvSchema& schema);

}  // namespace ifl
