#include "ifl/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "ifl/checkpoint.hpp"
#include "ifl/linalg.hpp"
#include "ifl/log.hpp"

namespace ifl {

namespace {

// Run-level stream tags; documented in docs/FORMATS.md.
constexpr std::uint64_t kDataSeedStream = 1;
constexpr std::uint64_t kPretrainStream = 2;
constexpr std::uint64_t kTrainSeedStream = 3;
constexpr std::uint64_t kAlignStream = 4;

std::string format_double(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.10g", value);
  return buffer;
}

void write_atomic(const std::string& path, const std::string& contents) {
  const std::string temp = path + ".tmp";
  {
    std::ofstream file(temp, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot open " + temp);
    file.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!file) throw IoError("write failed for " + temp);
  }
  if (std::rename(temp.c_str(), path.c_str()) != 0) {
    throw IoError("cannot rename " + temp + " to " + path);
  }
}

// Full-weight training of the backbone and a temporary head on the base
// dataset. This is the only place frozen tensors are ever written.
void pretrain_backbone(Network& net, const Dataset& base,
                       const PretrainSettings& cfg, Rng& rng) {
  std::vector<AdamSlot> w_slots(net.layers.size());
  std::vector<AdamSlot> bias_slots(net.layers.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    w_slots[l] = {Matrix(net.layers[l].w.rows(), net.layers[l].w.cols()),
                  Matrix(net.layers[l].w.rows(), net.layers[l].w.cols())};
    bias_slots[l] = {Matrix(net.layers[l].bias.rows(), 1),
                     Matrix(net.layers[l].bias.rows(), 1)};
  }
  AdamSlot head_w{Matrix(net.head.w.rows(), net.head.w.cols()),
                  Matrix(net.head.w.rows(), net.head.w.cols())};
  AdamSlot head_bias{Matrix(net.head.bias.rows(), 1),
                     Matrix(net.head.bias.rows(), 1)};

  const ClassRange all{0, net.dims.classes};
  const std::size_t n = base.size();
  const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  long step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t begin = 0; begin < n; begin += batch) {
      const std::size_t end = std::min(n, begin + batch);
      const std::vector<std::size_t> chunk(order.begin() + begin,
                                           order.begin() + end);
      const Matrix xb = base.x.gather_cols(chunk);
      std::vector<int> yb(chunk.size());
      for (std::size_t k = 0; k < chunk.size(); ++k) yb[k] = base.y[chunk[k]];

      const ForwardCache cache = forward(net, xb);
      const LossResult loss = local_ce_loss(cache.logits, yb, all);
      const Gradients grads = backward(net, cache, loss.grad_logits,
                                       BackwardMode::FullWeightProbe);
      ++step;
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        adam_update(net.layers[l].w, grads.layers[l].w, w_slots[l], step,
                    cfg.learning_rate, 0.9, 0.999, 1e-8);
        adam_update(net.layers[l].bias, grads.layers[l].bias, bias_slots[l],
                    step, cfg.learning_rate, 0.9, 0.999, 1e-8);
      }
      adam_update(net.head.w, grads.head_w, head_w, step, cfg.learning_rate,
                  0.9, 0.999, 1e-8);
      adam_update(net.head.bias, grads.head_bias, head_bias, step,
                  cfg.learning_rate, 0.9, 0.999, 1e-8);
    }
  }
}

double plain_accuracy(const Network& net, const Dataset& data) {
  const ForwardCache cache = forward(net, data.x);
  std::size_t correct = 0;
  for (std::size_t s = 0; s < data.size(); ++s) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cache.logits.rows(); ++c) {
      if (cache.logits(c, s) > cache.logits(best, s)) best = c;
    }
    if (best == static_cast<std::size_t>(data.y[s])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& cfg) {
  const auto started = std::chrono::steady_clock::now();
  const Rng root(cfg.seed);

  TaskSpec spec = cfg.data;
  spec.seed = root.fork(kDataSeedStream).seed();
  const TaskSequence sequence = gen_task_sequence(spec);

  // One pre-trained backbone per seed, shared by every variant.
  const NetworkDims base_dims{spec.input_dim, cfg.hidden, cfg.feature_dim,
                              spec.base_classes};
  Rng pretrain_rng = root.fork(kPretrainStream);
  Network base_net = Network::build(base_dims, {}, pretrain_rng);
  pretrain_backbone(base_net, sequence.base_train, cfg.pretrain, pretrain_rng);

  RunReport report;
  report.seed = cfg.seed;
  report.pretrain_accuracy = plain_accuracy(base_net, sequence.base_test);
  log::info("seed " + std::to_string(cfg.seed) + ": pretrain accuracy " +
            format_double(report.pretrain_accuracy));
  report.pretrained_backbone = base_net;
  report.pretrained_backbone.head = LinearHead{};  // backbone only

  const NetworkDims dims = cfg.network_dims(sequence.total_classes);
  for (DesignVariant variant : cfg.variants) {
    VariantResult result(variant, sequence.tasks.size());

    // Clone the frozen backbone; the continual head starts at zero.
    Network net;
    net.dims = dims;
    net.layers = base_net.layers;
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      net.layers[l].adapted = false;
    }
    for (std::size_t index : cfg.adapted_layers) {
      net.layers[index].adapted = true;
    }
    net.head.w = Matrix(dims.classes, dims.feature);
    net.head.bias = Matrix(dims.classes, 1);

    std::vector<GradientMemory> memories;
    for (std::size_t l : net.adapted_layer_indices()) {
      memories.emplace_back(net.layers[l].in_dim());
    }

    TaskTrainConfig train_cfg = cfg.train;
    train_cfg.variant = variant;
    train_cfg.seed = root.fork(kTrainSeedStream).seed();

    ClassStats seen_stats;
    for (std::size_t t = 0; t < sequence.tasks.size(); ++t) {
      result.tasks.push_back(train_task(net, memories, sequence.tasks[t],
                                        train_cfg, t + 1,
                                        sequence.tasks.size()));
      if (cfg.align.enabled) {
        const ClassStats task_stats =
            collect_stats(net, sequence.tasks[t].train);
        for (const auto& [label, entry] : task_stats.per_class) {
          seen_stats.per_class[label] = entry;
        }
        Rng align_rng = root.fork(kAlignStream).fork(t + 1);
        align_classifier(net, seen_stats, cfg.align.params, align_rng);
      }
      result.matrix.set_row(t, evaluate(net, sequence, t));
    }
    result.summary = acc_metrics(result.matrix);
    result.expanded_params =
        param_count(dims, cfg.train.rank, cfg.adapted_layers);
    log::info("seed " + std::to_string(cfg.seed) + " " + to_string(variant) +
              ": final " + format_double(result.summary.final_acc) +
              ", averaged " + format_double(result.summary.averaged));
    report.variants.push_back(std::move(result));
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started)
          .count();
  return report;
}

void write_run_outputs(const ExperimentConfig& cfg,
                       const std::vector<RunReport>& reports,
                       const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto path = [&](const std::string& name) {
    return (std::filesystem::path(out_dir) / name).string();
  };

  std::ostringstream results;
  results << "variant,seed,task_learned,task_evaluated,accuracy\n";
  for (const auto& report : reports) {
    for (const auto& variant : report.variants) {
      for (std::size_t i = 0; i < variant.matrix.tasks(); ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          results << to_string(variant.variant) << ',' << report.seed << ','
                  << (i + 1) << ',' << (j + 1) << ','
                  << format_double(variant.matrix.at(i, j)) << '\n';
        }
      }
    }
  }
  write_atomic(path("results.csv"), results.str());

  std::ostringstream summary;
  summary << "variant,seed,final_acc,averaged_acc,expanded_params\n";
  for (const auto& report : reports) {
    for (const auto& variant : report.variants) {
      summary << to_string(variant.variant) << ',' << report.seed << ','
              << format_double(variant.summary.final_acc) << ','
              << format_double(variant.summary.averaged) << ','
              << variant.expanded_params << '\n';
    }
  }
  write_atomic(path("summary.csv"), summary.str());

  std::ostringstream losses;
  losses << "variant,seed,task,epoch,loss\n";
  for (const auto& report : reports) {
    for (const auto& variant : report.variants) {
      for (std::size_t t = 0; t < variant.tasks.size(); ++t) {
        const auto& trace = variant.tasks[t].epoch_losses;
        for (std::size_t e = 0; e < trace.size(); ++e) {
          losses << to_string(variant.variant) << ',' << report.seed << ','
                 << (t + 1) << ',' << (e + 1) << ','
                 << format_double(trace[e]) << '\n';
        }
      }
    }
  }
  write_atomic(path("losses.csv"), losses.str());

  write_atomic(path("config_echo.json"), config_to_json(cfg).dump(2) + "\n");

  for (const auto& report : reports) {
    save_checkpoint(
        path("pretrained_seed" + std::to_string(report.seed) + ".ifl"),
        report.pretrained_backbone, {}, {});
  }
}

std::vector<SweepPoint> sweep(const ExperimentConfig& cfg,
                              const std::string& parameter,
                              const std::vector<double>& values,
                              const std::vector<std::uint64_t>& seeds) {
  if (parameter != "r" && parameter != "eps") {
    throw ConfigError("sweep.param",
                      "unknown parameter '" + parameter + "' (use r or eps)");
  }
  if (values.empty()) {
    throw ConfigError("sweep.values", "no values given");
  }
  std::vector<double> unique_values;
  for (double value : values) {
    if (std::find(unique_values.begin(), unique_values.end(), value) !=
        unique_values.end()) {
      log::warn("sweep: duplicate value " + format_double(value) +
                " dropped");
      continue;
    }
    unique_values.push_back(value);
  }

  std::vector<SweepPoint> points;
  for (double value : unique_values) {
    ExperimentConfig point_cfg = cfg;
    if (parameter == "r") {
      if (value < 1.0 || value != std::floor(value)) {
        throw ConfigError("sweep.values", "rank values must be integers >= 1");
      }
      point_cfg.train.rank = static_cast<std::size_t>(value);
    } else {
      if (!(value > 0.0) || value > 1.0) {
        throw ConfigError("sweep.values", "eps values must lie in (0, 1]");
      }
      point_cfg.train.epsilon = value;
    }
    SweepPoint point;
    point.value = value;
    for (std::uint64_t seed : seeds) {
      point_cfg.seed = seed;
      point.reports.push_back(run_experiment(point_cfg));
    }
    points.push_back(std::move(point));
  }
  return points;
}

void write_sweep_outputs(const std::string& parameter,
                         const std::vector<SweepPoint>& points,
                         const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ostringstream table;
  table << "param,value,variant,seed,final_acc,averaged_acc\n";
  for (const auto& point : points) {
    for (const auto& report : point.reports) {
      for (const auto& variant : report.variants) {
        table << parameter << ',' << format_double(point.value) << ','
              << to_string(variant.variant) << ',' << report.seed << ','
              << format_double(variant.summary.final_acc) << ','
              << format_double(variant.summary.averaged) << '\n';
      }
    }
  }
  write_atomic((std::filesystem::path(out_dir) / "sweep.csv").string(),
               table.str());
}

}  // namespace ifl
