// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "echodnd/checkpoint.hpp"
#include "echodnd/commands.hpp"
#include "echodnd/config.hpp"
#include "echodnd/errors.hpp"
#include "echodnd/kernels.hpp"

using namespace echodnd;

namespace {

// Shared training-shape flags. Unset flags leave the config alone.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<int> stride;
  std::optional<std::string> noise;
  std::optional<std::string> conditioner;
  std::optional<std::string> loss;
  std::vector<std::string> settings;

  void attach(CLI::App* app, bool with_config) {
    if (with_config) app->add_option("--config", config_path, "key=value config file");
    app->add_option("--seed", seed, "root seed for every random stream");
    app->add_option("--steps", steps, "training steps");
    app->add_option("--stride", stride, "DDIM timestep stride");
    app->add_option("--noise", noise, "gaussian|bernoulli|both")->check(CLI::IsMember({"gaussian", "bernoulli", "both"}));
    app->add_option("--conditioner", conditioner, "plain|mfcm")->check(CLI::IsMember({"plain", "mfcm"}));
    app->add_option("--loss", loss, "base|kl|full")->check(CLI::IsMember({"base", "kl", "full"}));
    app->add_option("--set", settings, "extra key=value config settings");
  }

  void apply(TrainingConfig& cfg) const {
    for (const std::string& s : settings) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) cfg.seed = *seed;
    if (steps) cfg.train_steps = *steps;
    if (stride) cfg.stride = *stride;
    if (noise) apply_setting(cfg, "noise", *noise);
    if (conditioner) apply_setting(cfg, "conditioner", *conditioner);
    if (loss) apply_setting(cfg, "loss", *loss);
    cfg.validate();
  }

  TrainingConfig build() const {
    TrainingConfig cfg = config_path.empty() ? TrainingConfig{} : load_config(config_path);
    apply(cfg);
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-noise diffusion segmentation: data generation, training, evaluation, ablation"};
  app.require_subcommand(1);
  std::string kernels = "auto";
  app.add_option("--kernels", kernels, "auto|scalar|avx2")->check(CLI::IsMember({"auto", "scalar", "avx2"}));

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "write a synthetic dataset");
  gen_cmd->add_option("--n", gen.n, "number of records")->required();
  gen_cmd->add_option("--side", gen.side, "image side, a multiple of 4");
  gen_cmd->add_option("--seed", gen.seed, "dataset seed");
  gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
  gen_cmd->add_flag("--zero-noise", gen.zero_noise, "image is the smoothed mask only");

  TrainArgs train;
  ConfigFlags train_flags;
  auto* train_cmd = app.add_subcommand("train", "train and write a checkpoint");
  train_cmd->add_option("--data", train.data_dir, "dataset directory")->required();
  train_cmd->add_option("--out", train.out_checkpoint, "checkpoint path")->required();
  train_cmd->add_option("--resume", train.resume, "continue from this checkpoint");
  train_cmd->add_option("--log", train.log_path, "loss log (default: <out>.csv)");
  train_flags.attach(train_cmd, true);

  EvalArgs eval;
  std::optional<int> eval_stride;
  std::optional<std::string> eval_sampler;
  std::optional<int> eval_ensemble;
  auto* eval_cmd = app.add_subcommand("eval", "sample and score a dataset");
  eval_cmd->add_option("--data", eval.data_dir, "dataset directory")->required();
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint path")->required();
  eval_cmd->add_option("--report", eval.report_path, "report path")->required();
  eval_cmd->add_option("--svg", eval.svg_path, "per-sample Dice histogram");
  eval_cmd->add_option("--timing", eval.timing_path, "wall-clock per image (default: <report>.timing.csv)");
  eval_cmd->add_option("--seed", eval.seed, "sampling seed (default: checkpoint seed)");
  eval_cmd->add_option("--stride", eval_stride, "DDIM timestep stride");
  eval_cmd->add_option("--sampler", eval_sampler, "ddim|ddpm")->check(CLI::IsMember({"ddim", "ddpm"}));
  eval_cmd->add_option("--ensemble", eval_ensemble, "samples per branch");

  AblateArgs ablate;
  ConfigFlags ablate_flags;
  auto* ablate_cmd = app.add_subcommand("ablate", "train and score a sweep of variants");
  ablate_cmd->add_option("--data", ablate.data_dir, "training dataset directory")->required();
  ablate_cmd->add_option("--eval-data", ablate.eval_data_dir, "held-out dataset (default: last quarter of --data)");
  ablate_cmd->add_option("--axes", ablate.axes, "any of steps conditioner loss noise")->delimiter(',');
  ablate_cmd->add_option("--out", ablate.out_dir, "output directory")->required();
  ablate_flags.attach(ablate_cmd, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (!kernels::select(kernels)) throw ConfigError("kernel set '" + kernels + "' is not supported on this CPU");
    if (gen_cmd->parsed()) {
      cmd_gen_data(gen);
    } else if (train_cmd->parsed()) {
      if (!train.resume.empty()) {
        // A resumed run starts from the checkpoint's own config.
        TrainingConfig cfg = load_checkpoint(train.resume).config;
        if (!train_flags.config_path.empty()) cfg = load_config(train_flags.config_path);
        train_flags.apply(cfg);
        train.config = cfg;
      } else {
        train.config = train_flags.build();
      }
      cmd_train(train, std::cerr);
    } else if (eval_cmd->parsed()) {
      if (eval_stride) eval.overrides.emplace_back("stride", std::to_string(*eval_stride));
      if (eval_sampler) eval.overrides.emplace_back("sampler", *eval_sampler);
      if (eval_ensemble) eval.overrides.emplace_back("ensemble", std::to_string(*eval_ensemble));
      const EvalReport report = cmd_eval(eval);
      std::cout << "mean_dice " << report.mean_dice << "\n";
    } else if (ablate_cmd->parsed()) {
      ablate.base = ablate_flags.build();
      cmd_ablate(ablate, std::cerr);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
