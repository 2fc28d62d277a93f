// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "echodnd/pipeline.hpp"

namespace echodnd {

// The cmd_* functions throw ConfigError / IoError / NumericalError; the CLI
// turns those into a message and a nonzero exit.

struct GenDataArgs {
  int n = 0;
  int side = 32;
  std::uint64_t seed = 0;
  std::string out_dir;
  bool zero_noise = false;
};

void cmd_gen_data(const GenDataArgs& args);

inline constexpr const char* kLossLogHeader = "step,L_G,L_B,L_KLG,L_KLB,L_SCC,total";

/// One log row, every value printed with %.17g.
std::string format_loss_row(std::int64_t step, const StepReport& report);

struct TrainArgs {
  std::string data_dir;
  TrainingConfig config;
  std::string out_checkpoint;
  /// When set, training continues from this checkpoint. config must then
  /// match the checkpoint's snapshot except for train_steps, log_every and
  /// checkpoint_every.
  std::string resume;
  /// Defaults to out_checkpoint + ".csv". Appended to on resume.
  std::string log_path;
};

void cmd_train(const TrainArgs& args, std::ostream& progress);

struct EvalArgs {
  std::string data_dir;
  std::string checkpoint;
  std::string report_path;
  /// Optional per-sample Dice histogram.
  std::string svg_path;
  /// Wall-clock per image. Defaults to report_path + ".timing.csv".
  std::string timing_path;
  /// Sampler settings only: stride, sampler, ensemble.
  std::vector<std::pair<std::string, std::string>> overrides;
  std::optional<std::uint64_t> seed;
};

EvalReport cmd_eval(const EvalArgs& args);

/// Deterministic report text: sampler settings, mean and per-sample Dice.
std::string format_eval_report(const EvalReport& report, const TrainingConfig& config,
                               const std::string& model_kind, std::uint64_t seed);

/// Ten-bin histogram of per-sample Dice over [0, 1].
std::string dice_histogram_svg(const std::vector<double>& per_sample);

struct AblationVariant {
  /// (axis, value) in the order the axes were given.
  std::vector<std::pair<std::string, std::string>> labels;
  TrainingConfig config;
};

/// Cartesian product over axes drawn from {steps, conditioner, loss, noise}.
/// steps scales base.train_steps by 1/4, 1/2, 3/4, 1, 5/4, 3/2. No axes gives
/// the single baseline. Unknown or repeated axes throw ConfigError.
std::vector<AblationVariant> ablation_variants(const TrainingConfig& base,
                                               const std::vector<std::string>& axes);

struct AblateArgs {
  std::string data_dir;
  /// Held-out set. When empty the last quarter of data_dir is held out.
  std::string eval_data_dir;
  TrainingConfig base;
  std::vector<std::string> axes;
  std::string out_dir;
};

struct AblationRow {
  AblationVariant variant;
  double mean_dice = 0.0;
};

/// Trains and evaluates every variant; writes out_dir/summary.csv.
std::vector<AblationRow> cmd_ablate(const AblateArgs& args, std::ostream& progress);

}  // namespace echodnd
