#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ifl/checkpoint.hpp"
#include "ifl/config.hpp"
#include "ifl/log.hpp"
#include "ifl/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPropertyFailure = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitIoError = 3;

std::vector<std::uint64_t> effective_seeds(
    const ifl::ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds) {
  return seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : seeds;
}

std::string pick_output_dir(const ifl::ExperimentConfig& cfg,
                            const std::string& cli_out) {
  if (!cli_out.empty()) return cli_out;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  throw ifl::ConfigError("output_dir",
                         "set it in the config or pass --out");
}

int run_command(const std::string& config_path, const std::string& out,
                const std::vector<std::uint64_t>& seeds) {
  const ifl::ExperimentConfig cfg = ifl::load_config(config_path);
  const std::string out_dir = pick_output_dir(cfg, out);
  std::vector<ifl::RunReport> reports;
  for (std::uint64_t seed : effective_seeds(cfg, seeds)) {
    ifl::ExperimentConfig seeded = cfg;
    seeded.seed = seed;
    reports.push_back(ifl::run_experiment(seeded));
  }
  ifl::write_run_outputs(cfg, reports, out_dir);
  double total = 0.0;
  for (const auto& report : reports) total += report.seconds;
  std::cout << "wrote " << out_dir << "/results.csv, summary.csv, losses.csv ("
            << reports.size() << " seed(s), " << total << " s)\n";
  return kExitOk;
}

int check_command() {
  const auto results = ifl::check_suite();
  bool all_pass = true;
  for (const auto& result : results) {
    std::printf("%-28s tolerance %-8.2g observed %-12.4g %s\n",
                result.name.c_str(), result.tolerance, result.observed,
                result.pass ? "PASS" : "FAIL");
    all_pass = all_pass && result.pass;
  }
  return all_pass ? kExitOk : kExitPropertyFailure;
}

int sweep_command(const std::string& config_path, const std::string& param,
                  const std::vector<double>& values, const std::string& out,
                  const std::vector<std::uint64_t>& seeds) {
  const ifl::ExperimentConfig cfg = ifl::load_config(config_path);
  const std::string out_dir = pick_output_dir(cfg, out);
  const auto points =
      ifl::sweep(cfg, param, values, effective_seeds(cfg, seeds));
  ifl::write_sweep_outputs(param, points, out_dir);
  std::cout << "wrote " << out_dir << "/sweep.csv (" << points.size()
            << " value(s))\n";
  return kExitOk;
}

int ckpt_save_command(const std::string& path, const std::string& config_path,
                      std::uint64_t seed, bool seed_given) {
  ifl::ExperimentConfig cfg = config_path.empty()
                                  ? ifl::default_config()
                                  : ifl::load_config(config_path);
  if (seed_given) cfg.seed = seed;
  const ifl::RunReport report = [&] {
    ifl::ExperimentConfig pretrain_only = cfg;
    pretrain_only.variants = {};  // pre-training only
    return ifl::run_experiment(pretrain_only);
  }();
  ifl::save_checkpoint(path, report.pretrained_backbone, {}, {});
  std::cout << "saved pre-trained backbone (seed " << cfg.seed << ") to "
            << path << "\n";
  return kExitOk;
}

int ckpt_load_command(const std::string& path) {
  const ifl::CheckpointState state = ifl::load_checkpoint(path);
  std::cout << "checkpoint " << path << ": " << state.net.layers.size()
            << " layers (input " << state.net.dims.input << ", feature "
            << state.net.dims.feature << ", classes " << state.net.dims.classes
            << "), " << state.memories.size() << " memories, "
            << state.stats.per_class.size() << " class stats\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interference-free low-rank adaptation lab"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;

  auto* run = app.add_subcommand("run", "Run the configured experiment");
  run->add_option("--config", config_path, "Config file (JSON)")->required();
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--seeds", seeds, "Seeds to run")->delimiter(',');

  auto* check = app.add_subcommand("check", "Run the invariant suite");

  std::string sweep_param;
  std::vector<double> sweep_values;
  auto* sweep = app.add_subcommand("sweep", "Sweep r or eps");
  sweep->add_option("--config", config_path, "Config file (JSON)")->required();
  sweep->add_option("--param", sweep_param, "Parameter: r or eps")->required();
  sweep->add_option("--values", sweep_values, "Values to sweep")
      ->required()
      ->delimiter(',');
  sweep->add_option("--out", out_dir, "Output directory");
  sweep->add_option("--seeds", seeds, "Seeds to run")->delimiter(',');

  auto* ckpt = app.add_subcommand("ckpt", "Checkpoint utilities");
  ckpt->require_subcommand(1);
  std::string ckpt_path;
  std::uint64_t ckpt_seed = 0;
  auto* ckpt_save = ckpt->add_subcommand("save", "Pre-train and save a backbone");
  ckpt_save->add_option("path", ckpt_path, "Checkpoint file")->required();
  ckpt_save->add_option("--config", config_path, "Config file (JSON)");
  auto* seed_option = ckpt_save->add_option("--seed", ckpt_seed, "Seed");
  auto* ckpt_load = ckpt->add_subcommand("load", "Load and describe a checkpoint");
  ckpt_load->add_option("path", ckpt_path, "Checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& error) {
    const int code = app.exit(error);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (run->parsed()) return run_command(config_path, out_dir, seeds);
    if (check->parsed()) return check_command();
    if (sweep->parsed()) {
      return sweep_command(config_path, sweep_param, sweep_values, out_dir,
                           seeds);
    }
    if (ckpt->parsed()) {
      if (ckpt_save->parsed()) {
        return ckpt_save_command(ckpt_path, config_path, ckpt_seed,
                                 seed_option->count() > 0);
      }
      if (ckpt_load->parsed()) return ckpt_load_command(ckpt_path);
    }
  } catch (const ifl::ConfigError& error) {
    std::cerr << "config error: " << error.what() << "\n";
    return kExitConfigError;
  } catch (const ifl::IoError& error) {
    std::cerr << "io error: " << error.what() << "\n";
    return kExitIoError;
  } catch (const ifl::ParseError& error) {
    std::cerr << "parse error: " << error.what() << "\n";
    return kExitIoError;
  } catch (const ifl::FormatError& error) {
    std::cerr << "format error: " << error.what() << "\n";
    return kExitIoError;
  } catch (const std::exception& error) {
    std::cerr << "error: " << error.what() << "\n";
    return kExitPropertyFailure;
  }
  return kExitOk;
}
