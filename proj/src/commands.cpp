// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include "echodnd/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <sstream>

#include "echodnd/checkpoint.hpp"
#include "echodnd/config.hpp"
#include "echodnd/errors.hpp"
#include "echodnd/io.hpp"
#include "echodnd/synth.hpp"

namespace echodnd {
namespace {

std::string g17(double v) {
  char buffer[40];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

// Keys a resumed run may change.
bool resume_may_differ(const std::string& key) {
  return key == "train_steps" || key == "log_every" || key == "checkpoint_every";
}

void check_resume_config(const TrainingConfig& saved, const TrainingConfig& requested) {
  std::istringstream a(format_config(saved));
  std::istringstream b(format_config(requested));
  std::string la;
  std::string lb;
  while (std::getline(a, la) && std::getline(b, lb)) {
    if (la == lb) continue;
    const std::string key = la.substr(0, la.find('='));
    if (!resume_may_differ(key)) {
      throw ConfigError("resume: key '" + key + "' differs from the checkpoint (" + la + " vs " + lb + ")");
    }
  }
}

}  // namespace

void cmd_gen_data(const GenDataArgs& args) {
  if (args.n < 1) throw ConfigError("gen-data: n must be >= 1, got " + std::to_string(args.n));
  if (args.out_dir.empty()) throw ConfigError("gen-data: output directory is required");
  SynthOptions options;
  options.zero_noise = args.zero_noise;
  const std::vector<SampleRecord> records = synth_dataset(args.n, args.side, args.seed, options);
  write_dataset(args.out_dir, DatasetInfo{args.n, args.side, args.seed, options}, records);
}

std::string format_loss_row(std::int64_t step, const StepReport& report) {
  return std::to_string(step) + "," + g17(report.parts.gaussian) + "," + g17(report.parts.bernoulli) + "," +
         g17(report.parts.kl_gaussian) + "," + g17(report.parts.kl_bernoulli) + "," + g17(report.parts.scc) + "," +
         g17(report.total);
}

void cmd_train(const TrainArgs& args, std::ostream& progress) {
  if (args.out_checkpoint.empty()) throw ConfigError("train: output checkpoint path is required");
  std::vector<SampleRecord> dataset = read_dataset(args.data_dir);
  const std::string log_path = args.log_path.empty() ? args.out_checkpoint + ".csv" : args.log_path;

  std::unique_ptr<Trainer> trainer;
  bool append = false;
  if (!args.resume.empty()) {
    Checkpoint saved = load_checkpoint(args.resume);
    check_resume_config(saved.config, args.config);
    saved.config.train_steps = args.config.train_steps;
    saved.config.log_every = args.config.log_every;
    saved.config.checkpoint_every = args.config.checkpoint_every;
    trainer = std::make_unique<Trainer>(trainer_from_checkpoint(saved, std::move(dataset)));
    append = std::filesystem::exists(log_path);
  } else {
    trainer = std::make_unique<Trainer>(args.config, std::move(dataset));
  }

  std::ofstream log(log_path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
  if (!log) throw IoError("cannot open " + log_path + " for writing");
  if (!append) log << kLossLogHeader << "\n";

  const TrainingConfig& cfg = trainer->config();
  while (trainer->step_count() < cfg.train_steps) {
    StepReport report;
    try {
      report = trainer->step();
    } catch (const NumericalError& e) {
      throw NumericalError("training aborted at step " + std::to_string(trainer->step_count() + 1) + ": " + e.what());
    }
    const std::int64_t step = trainer->step_count();
    if (step % cfg.log_every == 0) {
      log << format_loss_row(step, report) << "\n";
      log.flush();
      progress << "step " << step << " total " << g17(report.total) << "\n";
    }
    if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.train_steps) {
      save_checkpoint(args.out_checkpoint, checkpoint_from_trainer(*trainer));
    }
  }
  if (!log) throw IoError("write failed: " + log_path);
  save_checkpoint(args.out_checkpoint, checkpoint_from_trainer(*trainer));
}

std::string format_eval_report(const EvalReport& report, const TrainingConfig& config,
                               const std::string& model_kind, std::uint64_t seed) {
  std::ostringstream out;
  out << "model=" << model_kind << "\n"
      << "noise=" << to_string(config.noise) << "\n"
      << "sampler=" << to_string(config.sampler) << "\n"
      << "diffusion_steps=" << config.diffusion_steps << "\n"
      << "stride=" << config.stride << "\n"
      << "ensemble=" << config.ensemble << "\n"
      << "seed=" << seed << "\n"
      << "records=" << report.per_sample.size() << "\n"
      << "mean_dice=" << g17(report.mean_dice) << "\n"
      << "index,dice\n";
  for (std::size_t i = 0; i < report.per_sample.size(); ++i) out << i << "," << g17(report.per_sample[i]) << "\n";
  return out.str();
}

std::string dice_histogram_svg(const std::vector<double>& per_sample) {
  constexpr int kBins = 10;
  std::vector<int> counts(kBins, 0);
  for (double d : per_sample) counts[static_cast<std::size_t>(std::clamp(static_cast<int>(d * kBins), 0, kBins - 1))]++;
  const int peak = std::max(1, *std::max_element(counts.begin(), counts.end()));
  constexpr int kWidth = 420;
  constexpr int kHeight = 260;
  constexpr int kLeft = 40;
  constexpr int kBottom = 220;
  constexpr int kPlotH = 190;
  constexpr int kBarW = 36;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << kHeight << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kBottom << "\" x2=\"" << kLeft + kBins * kBarW << "\" y2=\""
      << kBottom << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kBottom - kPlotH << "\" x2=\"" << kLeft << "\" y2=\"" << kBottom
      << "\" stroke=\"black\"/>\n";
  for (int b = 0; b < kBins; ++b) {
    const int h = counts[static_cast<std::size_t>(b)] * kPlotH / peak;
    svg << "<rect x=\"" << kLeft + b * kBarW + 2 << "\" y=\"" << kBottom - h << "\" width=\"" << kBarW - 4
        << "\" height=\"" << h << "\" fill=\"steelblue\"><title>" << counts[static_cast<std::size_t>(b)]
        << "</title></rect>\n";
  }
  for (int b = 0; b <= kBins; b += 2) {
    svg << "<text x=\"" << kLeft + b * kBarW << "\" y=\"" << kBottom + 15 << "\" font-size=\"11\" text-anchor=\"middle\">"
        << b / 10.0 << "</text>\n";
  }
  svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << kBottom - kPlotH + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
      << peak << "</text>\n"
      << "<text x=\"" << kLeft + kBins * kBarW / 2 << "\" y=\"" << kBottom + 32
      << "\" font-size=\"12\" text-anchor=\"middle\">per-sample Dice (n=" << per_sample.size() << ")</text>\n"
      << "</svg>\n";
  return svg.str();
}

EvalReport cmd_eval(const EvalArgs& args) {
  if (args.report_path.empty()) throw ConfigError("eval: report path is required");
  const Checkpoint checkpoint = load_checkpoint(args.checkpoint);
  TrainingConfig cfg = checkpoint.config;
  for (const auto& [key, value] : args.overrides) {
    if (key != "stride" && key != "sampler" && key != "ensemble") {
      throw ConfigError("eval: only sampler settings (stride, sampler, ensemble) may be overridden, got '" + key + "'");
    }
    apply_setting(cfg, key, value);
  }
  cfg.validate();
  const std::uint64_t seed = args.seed.value_or(cfg.seed);
  const std::vector<SampleRecord> dataset = read_dataset(args.data_dir);

  DenoiserFor denoiser_for;
  std::shared_ptr<const EchoDndNet> net;
  std::shared_ptr<const ModelParams> params;
  if (checkpoint.model_kind == "network") {
    net = std::make_shared<const EchoDndNet>(cfg.model, cfg.diffusion_steps);
    if (checkpoint.params.segments() != net->make_params().segments()) {
      throw ConfigError(args.checkpoint + ": parameter layout does not match its config snapshot");
    }
    net->check_input(dataset.front().image.height(), dataset.front().image.width());
    params = std::make_shared<const ModelParams>(checkpoint.params);
    auto denoiser = std::make_shared<const NetworkDenoiser>(*net, *params);
    denoiser_for = [denoiser](const SampleRecord&) { return denoiser; };
  } else {
    const NoiseSchedule schedule = cfg.gaussian_schedule();
    denoiser_for = [schedule](const SampleRecord& r) {
      return std::make_shared<const OracleDenoiser>(r.mask, schedule);
    };
  }
  const EvalReport report = evaluate(dataset, denoiser_for, cfg, seed);

  write_text(args.report_path, format_eval_report(report, cfg, checkpoint.model_kind, seed));
  std::ostringstream timing;
  timing << "index,seconds\n";
  for (std::size_t i = 0; i < report.seconds_per_image.size(); ++i) {
    timing << i << "," << g17(report.seconds_per_image[i]) << "\n";
  }
  write_text(args.timing_path.empty() ? args.report_path + ".timing.csv" : args.timing_path, timing.str());
  if (!args.svg_path.empty()) write_text(args.svg_path, dice_histogram_svg(report.per_sample));
  return report;
}

std::vector<AblationVariant> ablation_variants(const TrainingConfig& base,
                                               const std::vector<std::string>& axes) {
  std::vector<AblationVariant> variants{AblationVariant{{}, base}};
  std::set<std::string> seen;
  for (const std::string& axis : axes) {
    if (!seen.insert(axis).second) throw ConfigError("ablate: axis '" + axis + "' given twice");
    std::vector<std::pair<std::string, std::function<void(TrainingConfig&)>>> values;
    if (axis == "steps") {
      for (int quarter : {1, 2, 3, 4, 5, 6}) {
        const int steps = static_cast<int>(static_cast<std::int64_t>(base.train_steps) * quarter / 4);
        values.emplace_back(std::to_string(steps), [steps](TrainingConfig& c) { c.train_steps = steps; });
      }
    } else if (axis == "conditioner") {
      values.emplace_back("plain", [](TrainingConfig& c) { c.model.fusion = false; });
      values.emplace_back("mfcm", [](TrainingConfig& c) { c.model.fusion = true; });
    } else if (axis == "loss") {
      for (LossMode m : {LossMode::base, LossMode::kl, LossMode::full}) {
        values.emplace_back(to_string(m), [m](TrainingConfig& c) { c.loss = m; });
      }
    } else if (axis == "noise") {
      for (NoiseMode m : {NoiseMode::gaussian, NoiseMode::bernoulli, NoiseMode::both}) {
        values.emplace_back(to_string(m), [m](TrainingConfig& c) { c.noise = m; });
      }
    } else {
      throw ConfigError("ablate: unknown axis '" + axis + "' (expected steps, conditioner, loss or noise)");
    }
    std::vector<AblationVariant> next;
    for (const AblationVariant& v : variants) {
      for (const auto& [label, apply] : values) {
        AblationVariant w = v;
        w.labels.emplace_back(axis, label);
        apply(w.config);
        next.push_back(std::move(w));
      }
    }
    variants = std::move(next);
  }
  return variants;
}

std::vector<AblationRow> cmd_ablate(const AblateArgs& args, std::ostream& progress) {
  const std::vector<AblationVariant> variants = ablation_variants(args.base, args.axes);
  if (args.out_dir.empty()) throw ConfigError("ablate: output directory is required");
  std::vector<SampleRecord> train = read_dataset(args.data_dir);
  std::vector<SampleRecord> held_out;
  if (args.eval_data_dir.empty()) {
    if (train.size() < 2) throw ConfigError("ablate: need at least 2 records to hold out a quarter");
    const std::size_t keep = train.size() - std::max<std::size_t>(1, train.size() / 4);
    held_out.assign(train.begin() + static_cast<std::ptrdiff_t>(keep), train.end());
    train.resize(keep);
  } else {
    held_out = read_dataset(args.eval_data_dir);
  }

  std::vector<AblationRow> rows;
  for (const AblationVariant& variant : variants) {
    Trainer trainer(variant.config, train);
    while (trainer.step_count() < variant.config.train_steps) trainer.step();
    auto denoiser = std::make_shared<const NetworkDenoiser>(trainer.net(), trainer.params());
    const EvalReport report =
        evaluate(held_out, [denoiser](const SampleRecord&) { return denoiser; }, variant.config, variant.config.seed);
    rows.push_back(AblationRow{variant, report.mean_dice});
    std::string label = "baseline";
    if (!variant.labels.empty()) {
      label.clear();
      for (const auto& [axis, value] : variant.labels) label += (label.empty() ? "" : " ") + axis + "=" + value;
    }
    progress << label << " mean_dice " << g17(report.mean_dice) << "\n";
  }

  std::error_code ec;
  std::filesystem::create_directories(args.out_dir, ec);
  if (ec) throw IoError("cannot create " + args.out_dir + ": " + ec.message());
  std::ostringstream summary;
  summary << "variant";
  for (const std::string& axis : args.axes) summary << "," << axis;
  summary << ",mean_dice\n";
  for (const AblationRow& row : rows) {
    std::string name;
    for (const auto& [axis, value] : row.variant.labels) name += (name.empty() ? "" : "/") + value;
    summary << (name.empty() ? "baseline" : name);
    for (const auto& label : row.variant.labels) summary << "," << label.second;
    summary << "," << g17(row.mean_dice) << "\n";
  }
  write_text((std::filesystem::path(args.out_dir) / "summary.csv").string(), summary.str());
  return rows;
}

}  // namespace echodnd
