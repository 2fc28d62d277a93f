// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "echodnd/lattice.hpp"
#include "echodnd/rng.hpp"
#include "echodnd/schedule.hpp"

namespace echodnd {

/// Log clamp for the Bernoulli cross-entropy.
inline constexpr double kBceClamp = 1e-7;

/// One forward step: every pixel ~ Bernoulli((1−β_t)·x_prev + β_t/2).
Lattice b_forward_step(const Lattice& x_prev, int t, const NoiseSchedule& schedule, Rng& rng);

/// Closed-form marginal P(x_t = 1 | x0) = ᾱ_t·x0 + (1−ᾱ_t)/2. Accepts soft x0.
Lattice b_forward_marginal_prob(const Lattice& x0, int t, const NoiseSchedule& schedule);

/// P(x_{t−1} = 1 | x_t, x̂₀) by two-outcome Bayes with x̂₀ taken as a soft
/// probability. Requires t ≥ 2.
double b_posterior_prob(int x_t_bit, double x0_prob, int t, const NoiseSchedule& schedule);

/// Generalisation to a skip from t down to s (1 ≤ s < t): the transition
/// q(x_t | x_s) flips towards 1/2 with weight 1 − ᾱ_t/ᾱ_s. For s = t−1 it
/// reduces to b_posterior_prob.
double b_posterior_prob_between(int x_t_bit, double x0_prob, int t, int s,
                                const NoiseSchedule& schedule);

/// d b_posterior_prob / d x0_prob, for the KL regularizer's gradient.
double b_posterior_prob_grad(int x_t_bit, double x0_prob, int t, const NoiseSchedule& schedule);

/// Independent Bernoulli draw per pixel.
Lattice sample_bernoulli(const Lattice& prob, Rng& rng);

/// Hard decode: 1 where prob ≥ 0.5.
Lattice threshold_half(const Lattice& prob);

/// Reverse step t → t−1. For t ≥ 2 samples the analytic posterior; for t = 1
/// thresholds x̂₀ at 0.5.
Lattice b_reverse_step(const Lattice& x_t, const Lattice& x0_prob_hat, int t,
                       const NoiseSchedule& schedule, Rng& rng);

/// Strided reverse step t → t_next (t_next = 0 is the terminal decode).
Lattice b_reverse_step_between(const Lattice& x_t, const Lattice& x0_prob_hat, int t, int t_next,
                               const NoiseSchedule& schedule, Rng& rng);

/// Pixel-mean binary cross-entropy with p̂ clamped to [1e-7, 1−1e-7].
double b_bce_loss(const Lattice& x0, const Lattice& x0_prob_hat);

/// Pixel-mean KL(Bernoulli(p) ‖ Bernoulli(1/2)) with 0·ln 0 = 0.
double b_kl_prior(const Lattice& prob);

}  // namespace echodnd
