// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "echodnd/lattice.hpp"
#include "echodnd/schedule.hpp"

namespace echodnd {

/// Diagonal Gaussian reverse transition N(mean, variance·I).
struct GaussianReverseParams {
  Lattice mean;
  double variance = 0.0;
};

/// √ᾱ_t·x0 + √(1−ᾱ_t)·noise.
Lattice g_forward_marginal(const Lattice& x0, int t, const NoiseSchedule& schedule,
                           const Lattice& noise);

/// √(1−β_t)·x_prev + √β_t·noise.
Lattice g_forward_step(const Lattice& x_prev, int t, const NoiseSchedule& schedule,
                       const Lattice& noise);

/// ε-parameterized posterior: mean (x_t − β_t/√(1−ᾱ_t)·ε̂)/√(1−β_t) and
/// variance β̃_t = β_t(1−ᾱ_{t−1})/(1−ᾱ_t), with ᾱ_0 = 1.
GaussianReverseParams g_posterior_from_eps(const Lattice& x_t, const Lattice& eps_hat, int t,
                                           const NoiseSchedule& schedule);

/// x̂₀ = (x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t.
Lattice g_predict_x0(const Lattice& x_t, const Lattice& eps_hat, int t,
                     const NoiseSchedule& schedule);

/// Deterministic (η = 0) DDIM transition from t to t_next < t. t_next = 0
/// returns x̂₀.
Lattice g_ddim_step(const Lattice& x_t, const Lattice& eps_hat, int t, int t_next,
                    const NoiseSchedule& schedule);

/// Ancestral DDPM transition t → t−1: posterior mean plus √β̃_t·noise.
Lattice g_ancestral_step(const Lattice& x_t, const Lattice& eps_hat, int t,
                         const NoiseSchedule& schedule, const Lattice& noise);

/// Pixel-mean squared error between true and predicted noise.
double g_eps_loss(const Lattice& eps_true, const Lattice& eps_hat);

/// Pixel-mean KL(N(mean, variance) ‖ N(0, 1)). Throws ContractViolation for
/// variance ≤ 0.
double g_kl_prior(const GaussianReverseParams& params);

}  // namespace echodnd
