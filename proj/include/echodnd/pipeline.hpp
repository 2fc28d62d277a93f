// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "echodnd/fusion.hpp"
#include "echodnd/lattice.hpp"
#include "echodnd/model.hpp"
#include "echodnd/rng.hpp"
#include "echodnd/schedule.hpp"
#include "echodnd/synth.hpp"

namespace echodnd {

enum class LossMode { base, kl, full };
enum class SamplerKind { ddpm, ddim };

struct Lambdas {
  double gaussian = 1.0;
  double bernoulli = 1.0;
  double kl_gaussian = 0.01;
  double kl_bernoulli = 0.01;
  double scc = 0.1;

  friend bool operator==(const Lambdas&, const Lambdas&) = default;
};

struct TrainingConfig {
  Lambdas lambdas;
  int diffusion_steps = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  /// Both chains use the Gaussian schedule unless this is false.
  bool shared_schedule = true;
  double bernoulli_beta_min = 1e-4;
  double bernoulli_beta_max = 0.02;

  int train_steps = 2000;
  int batch_size = 8;
  double learning_rate = 5e-5;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::uint64_t seed = 0;

  NoiseMode noise = NoiseMode::both;
  LossMode loss = LossMode::full;
  SamplerKind sampler = SamplerKind::ddim;
  int stride = 50;
  /// Reverse-chain samples per branch; each one is a STAPLE rater.
  int ensemble = 1;
  bool hflip = false;
  ModelConfig model;

  int log_every = 10;
  int checkpoint_every = 0;

  /// λ with the loss-ablation flag applied: base drops λ3..λ5, kl drops λ5.
  Lambdas effective_lambdas() const;
  NoiseSchedule gaussian_schedule() const;
  NoiseSchedule bernoulli_schedule() const;
  /// Throws ConfigError for negative λ, non-positive sizes and the like.
  void validate() const;

  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

struct LossParts {
  double gaussian = 0.0;
  double bernoulli = 0.0;
  double kl_gaussian = 0.0;
  double kl_bernoulli = 0.0;
  double scc = 0.0;
};

/// Pixel-mean (x0 − scc_out)².
double scc_loss(const Lattice& x0, const Lattice& scc_out);

/// λ-weighted sum. Throws NumericalError naming the first non-finite part.
double total_loss(const LossParts& parts, const Lambdas& lambdas);

/// Variance used by the Gaussian KL term: β̃_t, except at t = 1 where β̃_1 = 0
/// is replaced by β̃_2 (β_1 when T = 1).
double kl_variance(const NoiseSchedule& schedule, int t);

/// One training example with its diffusion randomness drawn.
struct PreparedSample {
  Lattice image;
  Lattice mask;
  int t = 1;
  Lattice eps;
  Lattice x_t_gaussian;
  Lattice x_t_bernoulli;
};

PreparedSample prepare_sample(const SampleRecord& record, int t, const TrainingConfig& config,
                              const NoiseSchedule& gaussian, const NoiseSchedule& bernoulli,
                              Rng& rng);

struct LossEvaluation {
  LossParts parts;
  double total = 0.0;
};

/// Batch-mean composite loss. With want_gradient the batch-mean gradient is
/// written to params.grads() (overwriting it).
LossEvaluation composite_loss(std::span<const PreparedSample> batch, const EchoDndNet& net,
                              ModelParams& params, const TrainingConfig& config,
                              const NoiseSchedule& gaussian, const NoiseSchedule& bernoulli,
                              bool want_gradient);

/// Decoupled-weight-decay Adam.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(std::size_t size) : first_(size, 0.0), second_(size, 0.0) {}

  void step(std::span<double> params, std::span<const double> grads, const TrainingConfig& config);

  std::int64_t steps() const { return steps_; }
  const std::vector<double>& first_moment() const { return first_; }
  const std::vector<double>& second_moment() const { return second_; }
  void restore(std::int64_t steps, std::vector<double> first, std::vector<double> second);

 private:
  std::int64_t steps_ = 0;
  std::vector<double> first_;
  std::vector<double> second_;
};

struct StepReport {
  LossParts parts;
  double total = 0.0;
};

/// One optimisation step on a batch: uniform t per sample, both forward
/// corruptions, forward/backward, AdamW update.
StepReport train_step(std::span<const SampleRecord> batch, const EchoDndNet& net,
                      ModelParams& params, AdamW& optimizer, const TrainingConfig& config,
                      const NoiseSchedule& gaussian, const NoiseSchedule& bernoulli, Rng& rng);

/// Owns the full training state: network, parameters, optimizer, the "train"
/// random stream and the step counter.
class Trainer {
 public:
  Trainer(TrainingConfig config, std::vector<SampleRecord> dataset);

  StepReport step();

  const TrainingConfig& config() const { return config_; }
  const EchoDndNet& net() const { return net_; }
  const ModelParams& params() const { return params_; }
  ModelParams& params() { return params_; }
  const AdamW& optimizer() const { return optimizer_; }
  const Rng& rng() const { return rng_; }
  std::int64_t step_count() const { return step_count_; }
  const std::vector<SampleRecord>& dataset() const { return dataset_; }
  const NoiseSchedule& gaussian_schedule() const { return gaussian_; }
  const NoiseSchedule& bernoulli_schedule() const { return bernoulli_; }

  /// Replace state from a checkpoint.
  void restore(ModelParams params, AdamW optimizer, Rng rng, std::int64_t step_count);

 private:
  TrainingConfig config_;
  std::vector<SampleRecord> dataset_;
  EchoDndNet net_;
  NoiseSchedule gaussian_;
  NoiseSchedule bernoulli_;
  ModelParams params_;
  AdamW optimizer_;
  Rng rng_;
  std::int64_t step_count_ = 0;
};

struct SegmentationResult {
  Lattice final_mask;
  std::vector<Lattice> gaussian_masks;
  std::vector<Lattice> bernoulli_masks;
  Lattice fused_prob;
  std::optional<StapleResult> staple;
};

/// Dual-chain reverse sampling from (N(0,I), Bernoulli(1/2)) followed by
/// STAPLE fusion of the branch masks.
SegmentationResult sample_segmentation(const Lattice& image, const Denoiser& denoiser,
                                       const TrainingConfig& config,
                                       const NoiseSchedule& gaussian,
                                       const NoiseSchedule& bernoulli, Rng& rng);

/// 2|a∩b|/(|a|+|b|), 1.0 when both are empty.
double dice(const Lattice& a, const Lattice& b);

struct EvalReport {
  std::vector<double> per_sample;
  double mean_dice = 0.0;
  std::vector<double> seconds_per_image;
};

using DenoiserFor = std::function<std::shared_ptr<const Denoiser>(const SampleRecord&)>;

/// Samples every record with its own "sample" substream (seed, index).
EvalReport evaluate(std::span<const SampleRecord> dataset, const DenoiserFor& denoiser_for,
                    const TrainingConfig& config, std::uint64_t seed);

}  // namespace echodnd
