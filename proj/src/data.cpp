#include "ifl/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ifl/linalg.hpp"
#include "ifl/rng.hpp"

namespace ifl {

namespace {

// Stream tags for the generator; documented in docs/FORMATS.md.
constexpr std::uint64_t kMeanStream = 1;
constexpr std::uint64_t kRotationStream = 2;
constexpr std::uint64_t kPermutationStream = 3;
constexpr std::uint64_t kSampleStream = 4;
constexpr std::uint64_t kBaseMeanStream = 5;
constexpr std::uint64_t kBaseSampleStream = 6;

Matrix sphere_point(Rng& rng, std::size_t dim, double radius) {
  Matrix v(dim, 1);
  double norm = 0.0;
  while (norm < 1e-9) {
    for (std::size_t i = 0; i < dim; ++i) v(i, 0) = rng.normal();
    norm = v.frobenius_norm();
  }
  v *= radius / norm;
  return v;
}

Matrix random_rotation(Rng& rng, std::size_t dim) {
  Matrix gauss(dim, dim);
  for (std::size_t i = 0; i < dim; ++i) {
    for (std::size_t j = 0; j < dim; ++j) gauss(i, j) = rng.normal();
  }
  return svd(gauss).u;
}

std::vector<std::size_t> random_permutation(Rng& rng, std::size_t dim) {
  std::vector<std::size_t> perm(dim);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm, rng);
  return perm;
}

// Draws `count` samples around `mean` into consecutive columns of `x`
// starting at `offset`, writing `label` alongside.
void fill_class(Dataset& data, std::size_t offset, std::size_t count,
                const Matrix& mean, double noise, int label, Rng& rng) {
  const std::size_t dim = mean.rows();
  for (std::size_t s = 0; s < count; ++s) {
    for (std::size_t i = 0; i < dim; ++i) {
      data.x(i, offset + s) = mean(i, 0) + noise * rng.normal();
    }
    data.y[offset + s] = label;
  }
}

void apply_rotation(Dataset& data, const Matrix& rotation) {
  data.x = rotation * data.x;
}

void apply_permutation(Dataset& data, const std::vector<std::size_t>& perm) {
  Matrix out(data.x.rows(), data.x.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t j = 0; j < data.x.cols(); ++j) {
      out(i, j) = data.x(perm[i], j);
    }
  }
  data.x = std::move(out);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream stream(line);
  while (std::getline(stream, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string strip(const std::string& s) {
  std::size_t begin = 0;
  std::size_t end = s.size();
  while (begin < end && (s[begin] == ' ' || s[begin] == '\t' ||
                         s[begin] == '\r')) {
    ++begin;
  }
  while (end > begin && (s[end - 1] == ' ' || s[end - 1] == '\t' ||
                         s[end - 1] == '\r')) {
    --end;
  }
  return s.substr(begin, end - begin);
}

}  // namespace

const char* to_string(Generator generator) {
  switch (generator) {
    case Generator::GaussianBlobs:
      return "gaussian_blobs";
    case Generator::RotatedBlobs:
      return "rotated_blobs";
    case Generator::PermutedFeatures:
      return "permuted_features";
  }
  return "gaussian_blobs";
}

bool generator_from_string(const std::string& name, Generator& out) {
  if (name == "gaussian_blobs") {
    out = Generator::GaussianBlobs;
  } else if (name == "rotated_blobs") {
    out = Generator::RotatedBlobs;
  } else if (name == "permuted_features") {
    out = Generator::PermutedFeatures;
  } else {
    return false;
  }
  return true;
}

TaskSequence gen_task_sequence(const TaskSpec& spec) {
  if (spec.tasks == 0 || spec.classes_per_task == 0 ||
      spec.train_per_class == 0 || spec.test_per_class == 0 ||
      spec.input_dim == 0 || spec.base_classes == 0) {
    throw InvalidInput("gen_task_sequence: counts must be positive");
  }
  if (spec.noise < 0.0 || spec.separation < 0.0) {
    throw InvalidInput("gen_task_sequence: scales must be non-negative");
  }

  const Rng root(spec.seed);
  TaskSequence sequence;
  sequence.input_dim = spec.input_dim;
  sequence.total_classes = spec.tasks * spec.classes_per_task;

  // Shared mean slots: rotated and permuted variants reuse one mean per
  // within-task class slot, plain blobs draw a fresh mean per global class.
  const bool shared_means = spec.generator != Generator::GaussianBlobs;
  std::vector<Matrix> slot_means;
  if (shared_means) {
    for (std::size_t slot = 0; slot < spec.classes_per_task; ++slot) {
      Rng stream = root.fork(kMeanStream).fork(slot);
      slot_means.push_back(
          sphere_point(stream, spec.input_dim, spec.separation));
    }
  }

  for (std::size_t t = 0; t < spec.tasks; ++t) {
    TaskData task;
    task.classes.lo = t * spec.classes_per_task;
    task.classes.hi = (t + 1) * spec.classes_per_task;

    const std::size_t train_n = spec.classes_per_task * spec.train_per_class;
    const std::size_t test_n = spec.classes_per_task * spec.test_per_class;
    task.train.x = Matrix(spec.input_dim, train_n);
    task.train.y.resize(train_n);
    task.test.x = Matrix(spec.input_dim, test_n);
    task.test.y.resize(test_n);

    for (std::size_t slot = 0; slot < spec.classes_per_task; ++slot) {
      const int label = static_cast<int>(task.classes.lo + slot);
      Matrix mean;
      if (shared_means) {
        mean = slot_means[slot];
      } else {
        Rng stream = root.fork(kMeanStream).fork(task.classes.lo + slot);
        mean = sphere_point(stream, spec.input_dim, spec.separation);
      }
      Rng train_stream =
          root.fork(kSampleStream).fork((task.classes.lo + slot) * 2);
      Rng test_stream =
          root.fork(kSampleStream).fork((task.classes.lo + slot) * 2 + 1);
      fill_class(task.train, slot * spec.train_per_class, spec.train_per_class,
                 mean, spec.noise, label, train_stream);
      fill_class(task.test, slot * spec.test_per_class, spec.test_per_class,
                 mean, spec.noise, label, test_stream);
    }

    if (spec.generator == Generator::RotatedBlobs) {
      Rng stream = root.fork(kRotationStream).fork(t);
      const Matrix rotation = random_rotation(stream, spec.input_dim);
      apply_rotation(task.train, rotation);
      apply_rotation(task.test, rotation);
    } else if (spec.generator == Generator::PermutedFeatures) {
      Rng stream = root.fork(kPermutationStream).fork(t);
      const auto perm = random_permutation(stream, spec.input_dim);
      apply_permutation(task.train, perm);
      apply_permutation(task.test, perm);
    }
    sequence.tasks.push_back(std::move(task));
  }

  // Pre-training split: plain blobs over extra classes.
  const std::size_t base_train_n = spec.base_classes * spec.train_per_class;
  const std::size_t base_test_n = spec.base_classes * spec.test_per_class;
  sequence.base_train.x = Matrix(spec.input_dim, base_train_n);
  sequence.base_train.y.resize(base_train_n);
  sequence.base_test.x = Matrix(spec.input_dim, base_test_n);
  sequence.base_test.y.resize(base_test_n);
  for (std::size_t c = 0; c < spec.base_classes; ++c) {
    Rng mean_stream = root.fork(kBaseMeanStream).fork(c);
    const Matrix mean =
        sphere_point(mean_stream, spec.input_dim, spec.separation);
    Rng train_stream = root.fork(kBaseSampleStream).fork(c * 2);
    Rng test_stream = root.fork(kBaseSampleStream).fork(c * 2 + 1);
    fill_class(sequence.base_train, c * spec.train_per_class,
               spec.train_per_class, mean, spec.noise, static_cast<int>(c),
               train_stream);
    fill_class(sequence.base_test, c * spec.test_per_class, spec.test_per_class,
               mean, spec.noise, static_cast<int>(c), test_stream);
  }
  return sequence;
}

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  if (schema.feature_columns.empty()) {
    throw InvalidInput("load_csv: no feature columns requested");
  }
  std::ifstream file(path);
  if (!file) throw IoError("load_csv: cannot open " + path);

  std::string line;
  if (!std::getline(file, line)) {
    throw InvalidInput("load_csv: empty file " + path);
  }
  const auto header = split_csv_line(line);

  std::vector<std::size_t> feature_idx;
  for (const auto& name : schema.feature_columns) {
    bool found = false;
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (strip(header[j]) == name) {
        feature_idx.push_back(j);
        found = true;
        break;
      }
    }
    if (!found) {
      throw InvalidInput("load_csv: feature column '" + name + "' not in header");
    }
  }
  std::size_t label_idx = header.size();
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (strip(header[j]) == schema.label_column) {
      label_idx = j;
      break;
    }
  }
  if (label_idx == header.size()) {
    throw InvalidInput("load_csv: label column '" + schema.label_column +
                       "' not in header");
  }

  std::vector<std::vector<double>> feature_rows;
  std::vector<int> labels;
  std::size_t row = 0;
  while (std::getline(file, line)) {
    ++row;
    if (strip(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("load_csv: expected " + std::to_string(header.size()) +
                           " cells, found " + std::to_string(cells.size()),
                       row, cells.size() + 1);
    }
    std::vector<double> features(feature_idx.size());
    for (std::size_t k = 0; k < feature_idx.size(); ++k) {
      const std::string cell = strip(cells[feature_idx[k]]);
      double value = 0.0;
      const auto [ptr, ec] =
          std::from_chars(cell.data(), cell.data() + cell.size(), value);
      if (ec != std::errc() || ptr != cell.data() + cell.size() ||
          !std::isfinite(value)) {
        throw ParseError("load_csv: malformed real '" + cell + "'", row,
                         feature_idx[k] + 1);
      }
      features[k] = value;
    }
    const std::string cell = strip(cells[label_idx]);
    int label = 0;
    const auto [ptr, ec] =
        std::from_chars(cell.data(), cell.data() + cell.size(), label);
    if (ec != std::errc() || ptr != cell.data() + cell.size()) {
      throw ParseError("load_csv: malformed label '" + cell + "'", row,
                       label_idx + 1);
    }
    feature_rows.push_back(std::move(features));
    labels.push_back(label);
  }
  if (labels.empty()) {
    throw InvalidInput("load_csv: no data rows in " + path);
  }

  Dataset data;
  data.x = Matrix(feature_idx.size(), labels.size());
  for (std::size_t j = 0; j < labels.size(); ++j) {
    for (std::size_t i = 0; i < feature_idx.size(); ++i) {
      data.x(i, j) = feature_rows[j][i];
    }
  }
  data.y = std::move(labels);
  return data;
}

}  // namespace ifl
