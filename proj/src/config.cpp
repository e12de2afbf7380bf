#include "ifl/config.hpp"

#include <fstream>
#include <set>

namespace ifl {

namespace {

using nlohmann::json;

void require_known_keys(const json& object, const std::string& path,
                        const std::set<std::string>& known) {
  for (const auto& [key, value] : object.items()) {
    (void)value;
    if (!known.count(key)) {
      throw ConfigError(path.empty() ? key : path + "." + key, "unknown key");
    }
  }
}

template <typename T>
void read_uint(const json& object, const std::string& path,
               const std::string& key, T& out) {
  if (!object.contains(key)) return;
  const auto& value = object.at(key);
  if (!value.is_number_unsigned()) {
    throw ConfigError(path + key, "expected a non-negative integer");
  }
  out = value.get<T>();
}

void read_double(const json& object, const std::string& path,
                 const std::string& key, double& out) {
  if (!object.contains(key)) return;
  const auto& value = object.at(key);
  if (!value.is_number()) {
    throw ConfigError(path + key, "expected a number");
  }
  out = value.get<double>();
}

void read_bool(const json& object, const std::string& path,
               const std::string& key, bool& out) {
  if (!object.contains(key)) return;
  const auto& value = object.at(key);
  if (!value.is_boolean()) {
    throw ConfigError(path + key, "expected a boolean");
  }
  out = value.get<bool>();
}

void read_string(const json& object, const std::string& path,
                 const std::string& key, std::string& out) {
  if (!object.contains(key)) return;
  const auto& value = object.at(key);
  if (!value.is_string()) {
    throw ConfigError(path + key, "expected a string");
  }
  out = value.get<std::string>();
}

void read_size_list(const json& object, const std::string& path,
                    const std::string& key, std::vector<std::size_t>& out) {
  if (!object.contains(key)) return;
  const auto& value = object.at(key);
  if (!value.is_array()) {
    throw ConfigError(path + key, "expected an array of integers");
  }
  out.clear();
  for (const auto& item : value) {
    if (!item.is_number_unsigned()) {
      throw ConfigError(path + key, "expected non-negative integers");
    }
    out.push_back(item.get<std::size_t>());
  }
}

void parse_data(const json& object, TaskSpec& spec) {
  require_known_keys(object, "data",
                     {"tasks", "classes_per_task", "train_per_class",
                      "test_per_class", "input_dim", "generator", "separation",
                      "noise", "base_classes"});
  read_uint(object, "data.", "tasks", spec.tasks);
  read_uint(object, "data.", "classes_per_task", spec.classes_per_task);
  read_uint(object, "data.", "train_per_class", spec.train_per_class);
  read_uint(object, "data.", "test_per_class", spec.test_per_class);
  read_uint(object, "data.", "input_dim", spec.input_dim);
  read_uint(object, "data.", "base_classes", spec.base_classes);
  read_double(object, "data.", "separation", spec.separation);
  read_double(object, "data.", "noise", spec.noise);
  if (object.contains("generator")) {
    std::string name;
    read_string(object, "data.", "generator", name);
    if (!generator_from_string(name, spec.generator)) {
      throw ConfigError("data.generator", "unknown generator '" + name + "'");
    }
  }
}

void parse_model(const json& object, ExperimentConfig& cfg) {
  require_known_keys(object, "model",
                     {"hidden", "feature_dim", "adapted_layers"});
  read_size_list(object, "model.", "hidden", cfg.hidden);
  read_uint(object, "model.", "feature_dim", cfg.feature_dim);
  read_size_list(object, "model.", "adapted_layers", cfg.adapted_layers);
}

void parse_train(const json& object, ExperimentConfig& cfg) {
  require_known_keys(
      object, "train",
      {"rank", "epochs", "batch_size", "optimizer", "learning_rate",
       "head_lr_scale", "epsilon", "variants", "raw_random_rows",
       "reduction_rule", "global_ce", "input_sample_cap"});
  read_uint(object, "train.", "rank", cfg.train.rank);
  read_uint(object, "train.", "epochs", cfg.train.epochs);
  read_uint(object, "train.", "batch_size", cfg.train.batch_size);
  read_double(object, "train.", "learning_rate", cfg.train.learning_rate);
  read_double(object, "train.", "head_lr_scale", cfg.train.head_lr_scale);
  read_double(object, "train.", "epsilon", cfg.train.epsilon);
  read_bool(object, "train.", "raw_random_rows", cfg.train.raw_random_rows);
  read_bool(object, "train.", "global_ce", cfg.train.global_ce);
  read_uint(object, "train.", "input_sample_cap", cfg.train.input_sample_cap);
  if (object.contains("optimizer")) {
    std::string name;
    read_string(object, "train.", "optimizer", name);
    if (name == "adam") {
      cfg.train.optimizer = OptimizerKind::Adam;
    } else if (name == "sgd") {
      cfg.train.optimizer = OptimizerKind::Sgd;
    } else {
      throw ConfigError("train.optimizer", "expected 'adam' or 'sgd'");
    }
  }
  if (object.contains("reduction_rule")) {
    std::string name;
    read_string(object, "train.", "reduction_rule", name);
    if (name == "residual") {
      cfg.train.reduction_rule = ReductionRule::Residual;
    } else if (name == "as_written") {
      cfg.train.reduction_rule = ReductionRule::AsWritten;
    } else {
      throw ConfigError("train.reduction_rule",
                        "expected 'residual' or 'as_written'");
    }
  }
  if (object.contains("variants")) {
    const auto& value = object.at("variants");
    if (!value.is_array() || value.empty()) {
      throw ConfigError("train.variants", "expected a non-empty array");
    }
    cfg.variants.clear();
    for (const auto& item : value) {
      if (!item.is_string()) {
        throw ConfigError("train.variants", "expected variant names");
      }
      DesignVariant variant;
      const std::string name = item.get<std::string>();
      if (!variant_from_string(name, variant)) {
        throw ConfigError("train.variants", "unknown variant '" + name + "'");
      }
      for (DesignVariant existing : cfg.variants) {
        if (existing == variant) {
          throw ConfigError("train.variants",
                            "variant '" + name + "' listed twice");
        }
      }
      cfg.variants.push_back(variant);
    }
  }
}

void parse_align(const json& object, AlignSettings& align) {
  require_known_keys(object, "align",
                     {"enabled", "samples_per_class", "epochs",
                      "learning_rate", "batch_size"});
  read_bool(object, "align.", "enabled", align.enabled);
  read_uint(object, "align.", "samples_per_class",
            align.params.samples_per_class);
  read_uint(object, "align.", "epochs", align.params.epochs);
  read_double(object, "align.", "learning_rate", align.params.learning_rate);
  read_uint(object, "align.", "batch_size", align.params.batch_size);
}

void parse_pretrain(const json& object, PretrainSettings& pretrain) {
  require_known_keys(object, "pretrain",
                     {"epochs", "learning_rate", "batch_size"});
  read_uint(object, "pretrain.", "epochs", pretrain.epochs);
  read_double(object, "pretrain.", "learning_rate", pretrain.learning_rate);
  read_uint(object, "pretrain.", "batch_size", pretrain.batch_size);
}

void validate(const ExperimentConfig& cfg) {
  if (cfg.train.rank < 1) throw ConfigError("train.rank", "must be >= 1");
  if (cfg.train.epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
  if (cfg.train.batch_size < 1) {
    throw ConfigError("train.batch_size", "must be >= 1");
  }
  if (!(cfg.train.epsilon > 0.0) || cfg.train.epsilon > 1.0) {
    throw ConfigError("train.epsilon", "must lie in (0, 1]");
  }
  if (!(cfg.train.head_lr_scale > 0.0)) {
    throw ConfigError("train.head_lr_scale", "must be positive");
  }
  if (cfg.train.input_sample_cap < 1) {
    throw ConfigError("train.input_sample_cap", "must be >= 1");
  }
  if (cfg.feature_dim < 1) throw ConfigError("model.feature_dim", "must be >= 1");
  const std::size_t layer_count = cfg.hidden.size() + 1;
  for (std::size_t index : cfg.adapted_layers) {
    if (index >= layer_count) {
      throw ConfigError("model.adapted_layers",
                        "layer index " + std::to_string(index) +
                            " out of range for " +
                            std::to_string(layer_count) + " layers");
    }
  }
  if (cfg.data.tasks == 0 || cfg.data.classes_per_task == 0 ||
      cfg.data.train_per_class == 0 || cfg.data.test_per_class == 0 ||
      cfg.data.input_dim == 0 || cfg.data.base_classes == 0) {
    throw ConfigError("data", "counts must be positive");
  }
}

}  // namespace

ExperimentConfig default_config() { return ExperimentConfig{}; }

ExperimentConfig parse_config(const nlohmann::json& json_config) {
  if (!json_config.is_object()) {
    throw ConfigError("", "config root must be an object");
  }
  require_known_keys(json_config, "",
                     {"seed", "output_dir", "data", "model", "train", "align",
                      "pretrain"});
  ExperimentConfig cfg;
  read_uint(json_config, "", "seed", cfg.seed);
  read_string(json_config, "", "output_dir", cfg.output_dir);
  if (json_config.contains("data")) {
    if (!json_config.at("data").is_object()) {
      throw ConfigError("data", "expected an object");
    }
    parse_data(json_config.at("data"), cfg.data);
  }
  if (json_config.contains("model")) {
    if (!json_config.at("model").is_object()) {
      throw ConfigError("model", "expected an object");
    }
    parse_model(json_config.at("model"), cfg);
  }
  if (json_config.contains("train")) {
    if (!json_config.at("train").is_object()) {
      throw ConfigError("train", "expected an object");
    }
    parse_train(json_config.at("train"), cfg);
  }
  if (json_config.contains("align")) {
    if (!json_config.at("align").is_object()) {
      throw ConfigError("align", "expected an object");
    }
    parse_align(json_config.at("align"), cfg.align);
  }
  if (json_config.contains("pretrain")) {
    if (!json_config.at("pretrain").is_object()) {
      throw ConfigError("pretrain", "expected an object");
    }
    parse_pretrain(json_config.at("pretrain"), cfg.pretrain);
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw IoError("load_config: cannot open " + path);
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(file);
  } catch (const nlohmann::json::parse_error& error) {
    throw ConfigError("", std::string("invalid JSON: ") + error.what());
  }
  return parse_config(parsed);
}

nlohmann::json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::json out;
  out["seed"] = cfg.seed;
  out["output_dir"] = cfg.output_dir;
  out["data"] = {
      {"tasks", cfg.data.tasks},
      {"classes_per_task", cfg.data.classes_per_task},
      {"train_per_class", cfg.data.train_per_class},
      {"test_per_class", cfg.data.test_per_class},
      {"input_dim", cfg.data.input_dim},
      {"generator", to_string(cfg.data.generator)},
      {"separation", cfg.data.separation},
      {"noise", cfg.data.noise},
      {"base_classes", cfg.data.base_classes},
  };
  out["model"] = {
      {"hidden", cfg.hidden},
      {"feature_dim", cfg.feature_dim},
      {"adapted_layers", cfg.adapted_layers},
  };
  std::vector<std::string> variant_names;
  for (DesignVariant variant : cfg.variants) {
    variant_names.emplace_back(to_string(variant));
  }
  out["train"] = {
      {"rank", cfg.train.rank},
      {"epochs", cfg.train.epochs},
      {"batch_size", cfg.train.batch_size},
      {"optimizer",
       cfg.train.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
      {"learning_rate", cfg.train.learning_rate},
      {"head_lr_scale", cfg.train.head_lr_scale},
      {"epsilon", cfg.train.epsilon},
      {"variants", variant_names},
      {"raw_random_rows", cfg.train.raw_random_rows},
      {"reduction_rule", cfg.train.reduction_rule == ReductionRule::Residual
                             ? "residual"
                             : "as_written"},
      {"global_ce", cfg.train.global_ce},
      {"input_sample_cap", cfg.train.input_sample_cap},
  };
  out["align"] = {
      {"enabled", cfg.align.enabled},
      {"samples_per_class", cfg.align.params.samples_per_class},
      {"epochs", cfg.align.params.epochs},
      {"learning_rate", cfg.align.params.learning_rate},
      {"batch_size", cfg.align.params.batch_size},
  };
  out["pretrain"] = {
      {"epochs", cfg.pretrain.epochs},
      {"learning_rate", cfg.pretrain.learning_rate},
      {"batch_size", cfg.pretrain.batch_size},
  };
  return out;
}

}  // namespace ifl
