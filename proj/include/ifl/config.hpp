#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ifl/data.hpp"
#include "ifl/eval.hpp"
#include "ifl/inflora.hpp"
#include "ifl/model.hpp"

#include "json.hpp"

namespace ifl {

struct AlignSettings {
  bool enabled = false;
  AlignConfig params;
};

struct PretrainSettings {
  std::size_t epochs = 30;
  double learning_rate = 1e-3;
  std::size_t batch_size = 128;
};

// Everything a run needs. The single `seed` drives data generation,
// pre-training, and every training stream; `--seeds` replicates the run.
struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string output_dir;
  TaskSpec data;  // data.seed is derived from `seed`, not configured
  std::vector<std::size_t> hidden{64, 64};
  std::size_t feature_dim = 64;
  std::vector<std::size_t> adapted_layers{0, 1};
  TaskTrainConfig train;  // variant field is ignored; see `variants`
  std::vector<DesignVariant> variants{DesignVariant::InfLoRA,
                                      DesignVariant::SeqLoRA};
  AlignSettings align;
  PretrainSettings pretrain;

  NetworkDims network_dims(std::size_t total_classes) const {
    return NetworkDims{data.input_dim, hidden, feature_dim, total_classes};
  }
};

ExperimentConfig default_config();

// Strict parse: unknown keys and type mismatches raise ConfigError with the
// offending field path.
ExperimentConfig parse_config(const nlohmann::json& json);
ExperimentConfig load_config(const std::string& path);

// Canonical echo of a config (all fields explicit, alphabetical keys).
nlohmann::json config_to_json(const ExperimentConfig& cfg);

}  // namespace ifl
