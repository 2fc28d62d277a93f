// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include "echodnd/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include "echodnd/bernoulli_diffusion.hpp"
#include "echodnd/errors.hpp"
#include "echodnd/gaussian_diffusion.hpp"

namespace echodnd {

// ---------------------------------------------------------------------------
// Configuration

Lambdas TrainingConfig::effective_lambdas() const {
  Lambdas out = lambdas;
  if (loss == LossMode::base) {
    out.kl_gaussian = 0.0;
    out.kl_bernoulli = 0.0;
    out.scc = 0.0;
  } else if (loss == LossMode::kl) {
    out.scc = 0.0;
  }
  return out;
}

NoiseSchedule TrainingConfig::gaussian_schedule() const {
  return NoiseSchedule::linear(diffusion_steps, beta_min, beta_max);
}

NoiseSchedule TrainingConfig::bernoulli_schedule() const {
  if (shared_schedule) return gaussian_schedule();
  return NoiseSchedule::linear(diffusion_steps, bernoulli_beta_min, bernoulli_beta_max);
}

void TrainingConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
  for (double l : {lambdas.gaussian, lambdas.bernoulli, lambdas.kl_gaussian, lambdas.kl_bernoulli,
                   lambdas.scc}) {
    if (!(l >= 0.0) || !std::isfinite(l)) fail("lambda weights must be finite and >= 0");
  }
  if (diffusion_steps < 1) fail("diffusion_steps must be >= 1");
  if (train_steps < 0) fail("train_steps must be >= 0");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) fail("learning_rate must be >= 0");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    fail("adam betas must lie in [0,1)");
  }
  if (!(adam_epsilon > 0.0)) fail("adam_epsilon must be > 0");
  if (stride < 1) fail("stride must be >= 1");
  if (ensemble < 1) fail("ensemble must be >= 1");
  if (log_every < 1) fail("log_every must be >= 1");
  if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
  gaussian_schedule();
  bernoulli_schedule();
  EchoDndNet(model, diffusion_steps);
}

// ---------------------------------------------------------------------------
// Losses

double scc_loss(const Lattice& x0, const Lattice& scc_out) {
  require_same_shape(x0, scc_out, "scc_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = x0[i] - scc_out[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x0.size());
}

double total_loss(const LossParts& parts, const Lambdas& lambdas) {
  const std::pair<const char*, double> named[] = {
      {"L_G", parts.gaussian},          {"L_B", parts.bernoulli}, {"L_KLG", parts.kl_gaussian},
      {"L_KLB", parts.kl_bernoulli},    {"L_SCC", parts.scc}};
  for (const auto& [name, value] : named) {
    if (!std::isfinite(value)) throw NumericalError(std::string("non-finite loss term ") + name);
  }
  return lambdas.gaussian * parts.gaussian + lambdas.bernoulli * parts.bernoulli +
         lambdas.kl_gaussian * parts.kl_gaussian + lambdas.kl_bernoulli * parts.kl_bernoulli +
         lambdas.scc * parts.scc;
}

double kl_variance(const NoiseSchedule& schedule, int t) {
  auto posterior_variance = [&](int s) {
    return schedule.beta(s) * (1.0 - schedule.alpha_bar_or_one(s - 1)) / (1.0 - schedule.alpha_bar(s));
  };
  if (t > 1) return posterior_variance(t);
  return schedule.steps() >= 2 ? posterior_variance(2) : schedule.beta(1);
}

// ---------------------------------------------------------------------------
// Training

PreparedSample prepare_sample(const SampleRecord& record, int t, const TrainingConfig& config,
                              const NoiseSchedule& gaussian, const NoiseSchedule& bernoulli,
                              Rng& rng) {
  (void)config;
  require_binary(record.mask, "prepare_sample");
  PreparedSample s;
  s.image = record.image;
  s.mask = record.mask;
  s.t = t;
  s.eps = Lattice(record.mask.height(), record.mask.width());
  for (double& v : s.eps.values()) v = rng.normal();
  s.x_t_gaussian = g_forward_marginal(record.mask, t, gaussian, s.eps);
  s.x_t_bernoulli = sample_bernoulli(b_forward_marginal_prob(record.mask, t, bernoulli), rng);
  return s;
}

LossEvaluation composite_loss(std::span<const PreparedSample> batch, const EchoDndNet& net,
                              ModelParams& params, const TrainingConfig& config,
                              const NoiseSchedule& gaussian, const NoiseSchedule& bernoulli,
                              bool want_gradient) {
  if (batch.empty()) throw ContractViolation("composite_loss: empty batch");
  const Lambdas lambdas = config.effective_lambdas();
  const bool use_g = uses_gaussian(config.noise);
  const bool use_b = uses_bernoulli(config.noise);
  const double batch_scale = 1.0 / static_cast<double>(batch.size());
  if (want_gradient) params.zero_grad();

  LossEvaluation eval;
  ForwardRecord record;
  for (const PreparedSample& s : batch) {
    net.forward_recorded(s.image, use_g ? &s.x_t_gaussian : nullptr,
                         use_b ? &s.x_t_bernoulli : nullptr, s.t, params, record);
    const std::size_t n = s.mask.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    LossParts parts;
    OutputAdjoints adj;

    if (use_g) {
      const Lattice& eps_hat = record.output.eps_hat;
      parts.gaussian = g_eps_loss(s.eps, eps_hat);
      GaussianReverseParams reverse = g_posterior_from_eps(s.x_t_gaussian, eps_hat, s.t, gaussian);
      reverse.variance = kl_variance(gaussian, s.t);
      parts.kl_gaussian = g_kl_prior(reverse);
      if (want_gradient) {
        const double beta = gaussian.beta(s.t);
        const double mean_coef = -beta / (std::sqrt(1.0 - beta) * std::sqrt(1.0 - gaussian.alpha_bar(s.t)));
        adj.eps_hat = Lattice(s.mask.height(), s.mask.width());
        for (std::size_t i = 0; i < n; ++i) {
          adj.eps_hat[i] = batch_scale * inv_n *
                           (lambdas.gaussian * 2.0 * (eps_hat[i] - s.eps[i]) +
                            lambdas.kl_gaussian * reverse.mean[i] * mean_coef);
        }
      }
    }

    if (use_b) {
      const Lattice& p_hat = record.output.x0_prob_hat;
      parts.bernoulli = b_bce_loss(s.mask, p_hat);
      Lattice reverse_prob = p_hat;
      if (s.t >= 2) {
        for (std::size_t i = 0; i < n; ++i) {
          reverse_prob[i] = b_posterior_prob(static_cast<int>(s.x_t_bernoulli[i]), p_hat[i], s.t, bernoulli);
        }
      }
      parts.kl_bernoulli = b_kl_prior(reverse_prob);
      if (want_gradient) {
        adj.x0_prob_hat = Lattice(s.mask.height(), s.mask.width());
        for (std::size_t i = 0; i < n; ++i) {
          const double p = p_hat[i];
          double g = 0.0;
          if (p > kBceClamp && p < 1.0 - kBceClamp) {
            g += lambdas.bernoulli * (-s.mask[i] / p + (1.0 - s.mask[i]) / (1.0 - p));
          }
          const double phi = std::clamp(reverse_prob[i], kBceClamp, 1.0 - kBceClamp);
          const double dphi = s.t >= 2 ? b_posterior_prob_grad(static_cast<int>(s.x_t_bernoulli[i]), p, s.t, bernoulli)
                                       : 1.0;
          g += lambdas.kl_bernoulli * std::log(phi / (1.0 - phi)) * dphi;
          adj.x0_prob_hat[i] = batch_scale * inv_n * g;
        }
      }
    }

    parts.scc = scc_loss(s.mask, record.cond.scc_out);
    if (want_gradient && lambdas.scc != 0.0) {
      adj.scc_out = Lattice(s.mask.height(), s.mask.width());
      for (std::size_t i = 0; i < n; ++i) {
        adj.scc_out[i] = batch_scale * inv_n * lambdas.scc * 2.0 * (record.cond.scc_out[i] - s.mask[i]);
      }
    }

    total_loss(parts, lambdas);
    if (want_gradient) net.backward(record, adj, params);

    eval.parts.gaussian += batch_scale * parts.gaussian;
    eval.parts.bernoulli += batch_scale * parts.bernoulli;
    eval.parts.kl_gaussian += batch_scale * parts.kl_gaussian;
    eval.parts.kl_bernoulli += batch_scale * parts.kl_bernoulli;
    eval.parts.scc += batch_scale * parts.scc;
  }
  eval.total = total_loss(eval.parts, lambdas);
  return eval;
}

void AdamW::step(std::span<double> params, std::span<const double> grads, const TrainingConfig& config) {
  if (params.size() != first_.size() || grads.size() != first_.size()) {
    throw ContractViolation("AdamW: parameter count changed");
  }
  ++steps_;
  const double b1 = config.adam_beta1;
  const double b2 = config.adam_beta2;
  const double lr = config.learning_rate;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double decay = 1.0 - lr * config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    first_[i] = b1 * first_[i] + (1.0 - b1) * g;
    second_[i] = b2 * second_[i] + (1.0 - b2) * g * g;
    const double m_hat = first_[i] / correction1;
    const double v_hat = second_[i] / correction2;
    params[i] = params[i] * decay - lr * m_hat / (std::sqrt(v_hat) + config.adam_epsilon);
  }
}

void AdamW::restore(std::int64_t steps, std::vector<double> first, std::vector<double> second) {
  if (first.size() != second.size()) throw ContractViolation("AdamW: moment size mismatch");
  steps_ = steps;
  first_ = std::move(first);
  second_ = std::move(second);
}

StepReport train_step(std::span<const SampleRecord> batch, const EchoDndNet& net,
                      ModelParams& params, AdamW& optimizer, const TrainingConfig& config,
                      const NoiseSchedule& gaussian, const NoiseSchedule& bernoulli, Rng& rng) {
  if (batch.empty()) throw ContractViolation("train_step: empty batch");
  std::vector<PreparedSample> prepared;
  prepared.reserve(batch.size());
  for (const SampleRecord& record : batch) {
    const int t = rng.uniform_int(1, config.diffusion_steps);
    prepared.push_back(prepare_sample(record, t, config, gaussian, bernoulli, rng));
  }
  const LossEvaluation eval = composite_loss(prepared, net, params, config, gaussian, bernoulli, true);
  optimizer.step(params.values(), params.grads(), config);
  return StepReport{eval.parts, eval.total};
}

Trainer::Trainer(TrainingConfig config, std::vector<SampleRecord> dataset)
    : config_((config.validate(), std::move(config))),
      dataset_(std::move(dataset)),
      net_(config_.model, config_.diffusion_steps),
      gaussian_(config_.gaussian_schedule()),
      bernoulli_(config_.bernoulli_schedule()),
      params_(net_.make_params()),
      optimizer_(params_.size()),
      rng_(Rng::substream(config_.seed, "train")) {
  if (dataset_.empty()) throw ConfigError("training set is empty");
  for (const SampleRecord& r : dataset_) {
    require_same_shape(dataset_[0].image, r.image, "training set");
    require_same_shape(r.image, r.mask, "training record");
  }
  net_.check_input(dataset_[0].image.height(), dataset_[0].image.width());
  Rng init = Rng::substream(config_.seed, "init");
  net_.initialize(params_, init);
}

StepReport Trainer::step() {
  std::vector<SampleRecord> batch;
  batch.reserve(static_cast<std::size_t>(config_.batch_size));
  const int last = static_cast<int>(dataset_.size()) - 1;
  for (int b = 0; b < config_.batch_size; ++b) {
    SampleRecord record = dataset_[static_cast<std::size_t>(rng_.uniform_int(0, last))];
    if (config_.hflip && rng_.bernoulli(0.5)) {
      record.image = flip_horizontal(record.image);
      record.mask = flip_horizontal(record.mask);
    }
    batch.push_back(std::move(record));
  }
  const StepReport report = train_step(batch, net_, params_, optimizer_, config_, gaussian_, bernoulli_, rng_);
  ++step_count_;
  return report;
}

void Trainer::restore(ModelParams params, AdamW optimizer, Rng rng, std::int64_t step_count) {
  const ModelParams layout = net_.make_params();
  if (params.segments() != layout.segments()) {
    throw ConfigError("checkpoint parameter layout does not match the configured model");
  }
  if (optimizer.first_moment().size() != params.size()) {
    throw ConfigError("checkpoint optimizer state does not match the parameter count");
  }
  params_ = std::move(params);
  optimizer_ = std::move(optimizer);
  rng_ = std::move(rng);
  step_count_ = step_count;
}

// ---------------------------------------------------------------------------
// Sampling and evaluation

SegmentationResult sample_segmentation(const Lattice& image, const Denoiser& denoiser,
                                       const TrainingConfig& config,
                                       const NoiseSchedule& gaussian,
                                       const NoiseSchedule& bernoulli, Rng& rng) {
  const bool use_g = uses_gaussian(config.noise);
  const bool use_b = uses_bernoulli(config.noise);
  if (gaussian.steps() != bernoulli.steps()) {
    throw ContractViolation("sample_segmentation: chains must share T");
  }
  const std::vector<int> timesteps =
      sampling_timesteps(gaussian.steps(), config.sampler == SamplerKind::ddim ? config.stride : 1);
  const ConditioningFeatures cond = denoiser.condition(image);
  const int h = image.height();
  const int w = image.width();

  SegmentationResult result;
  for (int member = 0; member < config.ensemble; ++member) {
    Lattice x_g;
    Lattice x_b;
    if (use_g) {
      x_g = Lattice(h, w);
      for (double& v : x_g.values()) v = rng.normal();
    }
    if (use_b) {
      x_b = Lattice(h, w);
      for (double& v : x_b.values()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    for (std::size_t k = 0; k + 1 < timesteps.size(); ++k) {
      const int t = timesteps[k];
      const int t_next = timesteps[k + 1];
      const DenoiserOutput out = denoiser.predict(use_g ? &x_g : nullptr, use_b ? &x_b : nullptr, cond, t);
      if (use_g) {
        if (config.sampler == SamplerKind::ddim) {
          x_g = g_ddim_step(x_g, out.eps_hat, t, t_next, gaussian);
        } else {
          Lattice noise(h, w);
          for (double& v : noise.values()) v = rng.normal();
          x_g = g_ancestral_step(x_g, out.eps_hat, t, gaussian, noise);
        }
      }
      if (use_b) x_b = b_reverse_step_between(x_b, out.x0_prob_hat, t, t_next, bernoulli, rng);
    }
    if (use_g) result.gaussian_masks.push_back(binarize(x_g, 0.5));
    if (use_b) result.bernoulli_masks.push_back(std::move(x_b));
  }

  std::vector<Lattice> raters = result.gaussian_masks;
  raters.insert(raters.end(), result.bernoulli_masks.begin(), result.bernoulli_masks.end());
  if (raters.size() >= 2) {
    result.staple = staple_fuse(raters);
    result.fused_prob = result.staple->fused_prob;
    result.final_mask = binarize(result.fused_prob, 0.5);
  } else {
    result.fused_prob = raters.front();
    result.final_mask = raters.front();
  }
  return result;
}

double dice(const Lattice& a, const Lattice& b) {
  require_same_shape(a, b, "dice");
  require_binary(a, "dice");
  require_binary(b, "dice");
  std::size_t overlap = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    overlap += (a[i] == 1.0 && b[i] == 1.0) ? 1 : 0;
    total += static_cast<std::size_t>(a[i] + b[i]);
  }
  if (total == 0) return 1.0;
  return 2.0 * static_cast<double>(overlap) / static_cast<double>(total);
}

EvalReport evaluate(std::span<const SampleRecord> dataset, const DenoiserFor& denoiser_for,
                    const TrainingConfig& config, std::uint64_t seed) {
  if (dataset.empty()) throw ContractViolation("evaluate: empty dataset");
  const NoiseSchedule gaussian = config.gaussian_schedule();
  const NoiseSchedule bernoulli = config.bernoulli_schedule();
  EvalReport report;
  double sum = 0.0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto started = std::chrono::steady_clock::now();
    Rng rng = Rng::substream(seed, "sample", i);
    const std::shared_ptr<const Denoiser> denoiser = denoiser_for(dataset[i]);
    const SegmentationResult result =
        sample_segmentation(dataset[i].image, *denoiser, config, gaussian, bernoulli, rng);
    const double score = dice(result.final_mask, dataset[i].mask);
    report.per_sample.push_back(score);
    sum += score;
    report.seconds_per_image.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count());
  }
  report.mean_dice = sum / static_cast<double>(dataset.size());
  return report;
}

}  // namespace echodnd
