// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "echodnd/errors.hpp"
#include "echodnd/gaussian_diffusion.hpp"
#include "echodnd/pipeline.hpp"
#include "test_util.hpp"

using namespace echodnd;
using namespace echodnd::testing;

namespace {

TrainingConfig tiny_config() {
  TrainingConfig c;
  c.diffusion_steps = 100;
  c.batch_size = 2;
  c.learning_rate = 1e-3;
  c.stride = 10;
  c.model.base_channels = 4;
  c.model.cond_channels = 4;
  c.model.time_dim = 8;
  return c;
}

std::vector<PreparedSample> prepared_batch(const TrainingConfig& config, int side, std::size_t n, std::uint64_t seed) {
  const auto records = synth_dataset(static_cast<int>(n), side, seed);
  const NoiseSchedule g = config.gaussian_schedule();
  const NoiseSchedule b = config.bernoulli_schedule();
  Rng rng(seed);
  std::vector<PreparedSample> batch;
  for (const auto& r : records) batch.push_back(prepare_sample(r, rng.uniform_int(1, config.diffusion_steps), config, g, b, rng));
  return batch;
}

// Predicts an all-background x0 on both branches.
class EmptyDenoiser final : public Denoiser {
 public:
  explicit EmptyDenoiser(const NoiseSchedule& s) : schedule_(s) {}
  ConditioningFeatures condition(const Lattice& image) const override { return {{}, Lattice(image.height(), image.width())}; }
  DenoiserOutput predict(const Lattice* xg, const Lattice* xb, const ConditioningFeatures&, int t) const override {
    DenoiserOutput out;
    if (xg != nullptr) {
      out.eps_hat = *xg;
      for (double& v : out.eps_hat.values()) v /= std::sqrt(1.0 - schedule_.alpha_bar(t));
    }
    if (xb != nullptr) out.x0_prob_hat = Lattice(xb->height(), xb->width(), 0.0);
    return out;
  }

 private:
  NoiseSchedule schedule_;
};

}  // namespace

TEST_CASE("scc loss") {
  Rng rng(1);
  const Lattice x0 = random_mask(6, 6, rng);
  CHECK(scc_loss(x0, x0) == 0.0);
  CHECK(scc_loss(x0, Lattice(6, 6, 0.5)) == 0.25);
  const Lattice p = random_uniform(6, 6, rng);
  double acc = 0.0;
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) acc += (x0(y, x) - p(y, x)) * (x0(y, x) - p(y, x));
  }
  CHECK(scc_loss(x0, p) == doctest::Approx(acc / 36).epsilon(1e-14));
  CHECK_THROWS_AS(scc_loss(x0, Lattice(5, 6)), ContractViolation);
}

TEST_CASE("total loss weighting") {
  const Lambdas defaults;
  CHECK(total_loss(LossParts{}, defaults) == 0.0);
  const LossParts ones{1, 1, 1, 1, 1};
  CHECK(total_loss(ones, defaults) == doctest::Approx(2.12).epsilon(1e-15));

  TrainingConfig c;
  c.loss = LossMode::base;
  const LossParts parts{0.3, 0.7, 5.0, 6.0, 7.0};
  CHECK(total_loss(parts, c.effective_lambdas()) == doctest::Approx(1.0).epsilon(1e-15));
  c.loss = LossMode::kl;
  CHECK(c.effective_lambdas().scc == 0.0);
  CHECK(c.effective_lambdas().kl_gaussian == 0.01);

  LossParts bad = ones;
  bad.kl_bernoulli = std::numeric_limits<double>::quiet_NaN();
  try {
    total_loss(bad, defaults);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("L_KLB") != std::string::npos);
  }
  bad = ones;
  bad.gaussian = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(total_loss(bad, defaults), NumericalError);
}

TEST_CASE("kl variance") {
  const NoiseSchedule s = make_linear_schedule(1000, 1e-4, 0.02);
  for (int t : {2, 10, 1000}) {
    const double expected = (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
    CHECK(kl_variance(s, t) == doctest::Approx(expected).epsilon(1e-14));
  }
  CHECK(kl_variance(s, 1) == kl_variance(s, 2));
  CHECK(kl_variance(NoiseSchedule::from_betas({0.3}), 1) == 0.3);
}

TEST_CASE("composite loss gradient matches central differences") {
  TrainingConfig config = tiny_config();
  const EchoDndNet net(config.model, config.diffusion_steps);
  ModelParams params = net.make_params();
  Rng rng(2);
  for (double& v : params.values()) v = 0.3 * rng.normal();
  const auto batch = prepared_batch(config, 8, 2, 3);
  const NoiseSchedule g = config.gaussian_schedule();
  const NoiseSchedule b = config.bernoulli_schedule();

  const LossEvaluation at = composite_loss(batch, net, params, config, g, b, true);
  CHECK(at.parts.gaussian > 0.0);
  CHECK(at.parts.bernoulli > 0.0);
  CHECK(at.parts.kl_gaussian > 0.0);
  CHECK(at.parts.kl_bernoulli > 0.0);
  CHECK(at.parts.scc > 0.0);
  const std::vector<double> analytic(params.grads().begin(), params.grads().end());

  double worst = 0.0;
  for (int k = 0; k < 200; ++k) {
    const std::size_t i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(params.size()) - 1));
    const double saved = params.values()[i];
    const double h = 1e-4;
    params.values()[i] = saved + h;
    const double up = composite_loss(batch, net, params, config, g, b, false).total;
    params.values()[i] = saved - h;
    const double down = composite_loss(batch, net, params, config, g, b, false).total;
    params.values()[i] = saved;
    const double numeric = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max({std::abs(analytic[i]), std::abs(numeric), 1e-6}));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("noise ablation isolates the twins") {
  for (NoiseMode mode : {NoiseMode::gaussian, NoiseMode::bernoulli}) {
    TrainingConfig config = tiny_config();
    config.noise = mode;
    const EchoDndNet net(config.model, config.diffusion_steps);
    ModelParams params = net.make_params();
    Rng rng(4);
    for (double& v : params.values()) v = 0.3 * rng.normal();
    const auto batch = prepared_batch(config, 8, 2, 5);
    const LossEvaluation e =
        composite_loss(batch, net, params, config, config.gaussian_schedule(), config.bernoulli_schedule(), true);
    const char* idle = mode == NoiseMode::gaussian ? "bnem." : "gnem.";
    const char* busy = mode == NoiseMode::gaussian ? "gnem." : "bnem.";
    if (mode == NoiseMode::gaussian) {
      CHECK(e.parts.bernoulli == 0.0);
      CHECK(e.parts.kl_bernoulli == 0.0);
      CHECK(e.parts.gaussian > 0.0);
    } else {
      CHECK(e.parts.gaussian == 0.0);
      CHECK(e.parts.kl_gaussian == 0.0);
      CHECK(e.parts.bernoulli > 0.0);
    }
    CHECK(e.parts.scc > 0.0);
    bool any_busy = false;
    for (std::size_t s : net.segments_with_prefix(params, idle)) {
      for (double v : params.segment_grads(s)) CHECK(v == 0.0);
    }
    for (std::size_t s : net.segments_with_prefix(params, busy)) {
      for (double v : params.segment_grads(s)) any_busy = any_busy || v != 0.0;
    }
    CHECK(any_busy);
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  TrainingConfig config = tiny_config();
  config.learning_rate = 0.0;
  Trainer trainer(config, synth_dataset(4, 8, 6));
  const ModelParams before = trainer.params();
  for (int i = 0; i < 3; ++i) {
    const StepReport r = trainer.step();
    CHECK(r.total > 0.0);
    CHECK(r.parts.gaussian > 0.0);
  }
  CHECK(trainer.params().values().size() == before.values().size());
  CHECK(std::equal(before.values().begin(), before.values().end(), trainer.params().values().begin()));
}

TEST_CASE("training is deterministic for a fixed seed") {
  TrainingConfig config = tiny_config();
  config.seed = 7;
  config.hflip = true;
  const auto data = synth_dataset(8, 8, 8);
  Trainer a(config, data);
  Trainer b(config, data);
  for (int i = 0; i < 100; ++i) {
    const StepReport ra = a.step();
    const StepReport rb = b.step();
    REQUIRE(ra.total == rb.total);
    REQUIRE(ra.parts.kl_bernoulli == rb.parts.kl_bernoulli);
  }
  CHECK(a.params() == b.params());
  CHECK(a.step_count() == 100);
  config.seed = 8;
  Trainer c(config, data);
  Trainer d(TrainingConfig(tiny_config()), data);
  CHECK(c.step().total != d.step().total);
}

TEST_CASE("AdamW against a hand computation") {
  TrainingConfig c;
  c.learning_rate = 0.1;
  c.weight_decay = 0.01;
  AdamW opt(2);
  std::vector<double> p{1.0, -2.0};
  opt.step(p, std::vector<double>{0.5, -0.1}, c);
  // First step: bias-corrected moments equal g and g², so the update is lr·sign(g).
  CHECK(p[0] == doctest::Approx(1.0 * 0.999 - 0.1 * 0.5 / (0.5 + 1e-8)).epsilon(1e-14));
  CHECK(p[1] == doctest::Approx(-2.0 * 0.999 + 0.1 * 0.1 / (0.1 + 1e-8)).epsilon(1e-14));
  const double p0 = p[0];
  opt.step(p, std::vector<double>{-0.2, -0.1}, c);
  const double m = (0.9 * 0.1 * 0.5 + 0.1 * -0.2) / (1 - 0.81);
  const double v = (0.999 * 0.001 * 0.25 + 0.001 * 0.04) / (1 - 0.999 * 0.999);
  CHECK(p[0] == doctest::Approx(p0 * 0.999 - 0.1 * m / (std::sqrt(v) + 1e-8)).epsilon(1e-13));
  CHECK(opt.steps() == 2);
  CHECK_THROWS_AS(opt.step(p, std::vector<double>{1.0}, c), ContractViolation);
}

TEST_CASE("oracle sampling reproduces the mask") {
  TrainingConfig config;
  const NoiseSchedule g = config.gaussian_schedule();
  const NoiseSchedule b = config.bernoulli_schedule();
  Rng masks(9);
  for (SamplerKind sampler : {SamplerKind::ddim, SamplerKind::ddpm}) {
    config.sampler = sampler;
    for (int trial = 0; trial < 10; ++trial) {
      const Lattice x0 = random_mask(8, 8, masks);
      const OracleDenoiser oracle(x0, g);
      Rng rng = Rng::substream(trial, "sample");
      const SegmentationResult r = sample_segmentation(Lattice(8, 8), oracle, config, g, b, rng);
      CHECK(r.final_mask == x0);
      REQUIRE(r.gaussian_masks.size() == 1);
      REQUIRE(r.bernoulli_masks.size() == 1);
      CHECK(r.gaussian_masks[0] == x0);
      CHECK(r.staple.has_value());
    }
  }
}

TEST_CASE("single-branch sampling uses that branch directly") {
  TrainingConfig config;
  config.noise = NoiseMode::bernoulli;
  const NoiseSchedule g = config.gaussian_schedule();
  Rng masks(10);
  const Lattice x0 = random_mask(8, 8, masks);
  const EmptyDenoiser empty(g);
  Rng rng(11);
  const SegmentationResult r = sample_segmentation(Lattice(8, 8), empty, config, g, g, rng);
  CHECK(r.gaussian_masks.empty());
  REQUIRE(r.bernoulli_masks.size() == 1);
  CHECK(r.final_mask == r.bernoulli_masks[0]);
  CHECK_FALSE(r.staple.has_value());

  config.noise = NoiseMode::gaussian;
  const OracleDenoiser oracle(x0, g);
  const SegmentationResult rg = sample_segmentation(Lattice(8, 8), oracle, config, g, g, rng);
  CHECK(rg.final_mask == x0);
  CHECK(rg.bernoulli_masks.empty());
}

TEST_CASE("ensemble mode feeds every member to fusion") {
  TrainingConfig config;
  config.ensemble = 3;
  const NoiseSchedule g = config.gaussian_schedule();
  Rng masks(12);
  const Lattice x0 = random_mask(8, 8, masks);
  const OracleDenoiser oracle(x0, g);
  Rng rng(13);
  const SegmentationResult r = sample_segmentation(Lattice(8, 8), oracle, config, g, g, rng);
  CHECK(r.gaussian_masks.size() == 3);
  CHECK(r.bernoulli_masks.size() == 3);
  REQUIRE(r.staple.has_value());
  CHECK(r.staple->sensitivities.size() == 6);
  CHECK(r.final_mask == x0);
}

TEST_CASE("sampling is deterministic for a fixed stream") {
  TrainingConfig config = tiny_config();
  const EchoDndNet net(config.model, config.diffusion_steps);
  ModelParams params = net.make_params();
  Rng init(14);
  for (double& v : params.values()) v = 0.3 * init.normal();
  const NetworkDenoiser denoiser(net, params);
  const auto data = synth_dataset(1, 8, 15);
  Rng a(16);
  Rng b(16);
  const auto g = config.gaussian_schedule();
  const SegmentationResult ra = sample_segmentation(data[0].image, denoiser, config, g, g, a);
  const SegmentationResult rb = sample_segmentation(data[0].image, denoiser, config, g, g, b);
  CHECK(ra.final_mask == rb.final_mask);
  CHECK(ra.fused_prob == rb.fused_prob);
}

TEST_CASE("dice") {
  Lattice a(4, 4);
  Lattice b(4, 4);
  CHECK(dice(a, b) == 1.0);
  a(0, 0) = a(0, 1) = a(0, 2) = a(0, 3) = 1.0;
  CHECK(dice(a, a) == 1.0);
  b(3, 0) = 1.0;
  CHECK(dice(a, b) == 0.0);
  b = Lattice(4, 4);
  b(0, 0) = b(0, 1) = b(1, 0) = b(1, 1) = 1.0;
  CHECK(dice(a, b) == 0.5);
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const Lattice x = random_mask(5, 5, rng);
    const Lattice y = random_mask(5, 5, rng);
    CHECK(dice(x, y) == dice(y, x));
    CHECK(dice(x, y) >= 0.0);
    CHECK(dice(x, y) <= 1.0);
  }
  CHECK_THROWS_AS(dice(Lattice(2, 2), Lattice(2, 3)), ContractViolation);
}

TEST_CASE("evaluate") {
  TrainingConfig config;
  config.stride = 100;
  const auto data = synth_dataset(6, 8, 18);
  const NoiseSchedule g = config.gaussian_schedule();
  const EvalReport oracle = evaluate(
      data, [&](const SampleRecord& r) { return std::make_shared<OracleDenoiser>(r.mask, g); }, config, 1);
  CHECK(oracle.mean_dice == 1.0);
  CHECK(oracle.per_sample.size() == 6);
  CHECK(oracle.seconds_per_image.size() == 6);

  const EvalReport empty =
      evaluate(data, [&](const SampleRecord&) { return std::make_shared<EmptyDenoiser>(g); }, config, 1);
  CHECK(empty.mean_dice == 0.0);

  // A mix of oracle and empty predictions yields non-trivial per-sample scores.
  const EvalReport mixed = evaluate(
      data,
      [&](const SampleRecord& r) -> std::shared_ptr<const Denoiser> {
        if (r.meta.noise_seed % 2 == 0) return std::make_shared<EmptyDenoiser>(g);
        return std::make_shared<OracleDenoiser>(r.mask, g);
      },
      config, 2);
  double sum = 0.0;
  for (double d : mixed.per_sample) sum += d;
  CHECK(std::abs(sum / 6.0 - mixed.mean_dice) <= 1e-12);
  CHECK_THROWS_AS(evaluate(std::span<const SampleRecord>{}, nullptr, config, 1), ContractViolation);
}

TEST_CASE("config validation") {
  TrainingConfig c;
  CHECK_NOTHROW(c.validate());
  c.lambdas.scc = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainingConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainingConfig{};
  c.stride = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainingConfig{};
  c.shared_schedule = false;
  c.bernoulli_beta_max = 0.05;
  CHECK(c.bernoulli_schedule().beta(c.diffusion_steps) == doctest::Approx(0.05));
  CHECK(c.gaussian_schedule().beta(c.diffusion_steps) == doctest::Approx(0.02));
}
