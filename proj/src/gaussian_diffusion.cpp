// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include "echodnd/gaussian_diffusion.hpp"

#include <cmath>
#include <string>

#include "echodnd/errors.hpp"

namespace echodnd {

Lattice g_forward_marginal(const Lattice& x0, int t, const NoiseSchedule& schedule,
                           const Lattice& noise) {
  require_same_shape(x0, noise, "g_forward_marginal");
  const double ab = schedule.alpha_bar(t);
  const double signal = std::sqrt(ab);
  const double spread = std::sqrt(1.0 - ab);
  Lattice out(x0.height(), x0.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = signal * x0[i] + spread * noise[i];
  return out;
}

Lattice g_forward_step(const Lattice& x_prev, int t, const NoiseSchedule& schedule,
                       const Lattice& noise) {
  require_same_shape(x_prev, noise, "g_forward_step");
  const double beta = schedule.beta(t);
  const double keep = std::sqrt(1.0 - beta);
  const double spread = std::sqrt(beta);
  Lattice out(x_prev.height(), x_prev.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * x_prev[i] + spread * noise[i];
  return out;
}

GaussianReverseParams g_posterior_from_eps(const Lattice& x_t, const Lattice& eps_hat, int t,
                                           const NoiseSchedule& schedule) {
  require_same_shape(x_t, eps_hat, "g_posterior_from_eps");
  const double beta = schedule.beta(t);
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar_or_one(t - 1);
  const double inv_keep = 1.0 / std::sqrt(1.0 - beta);
  const double eps_coef = beta / std::sqrt(1.0 - ab);
  GaussianReverseParams out;
  out.mean = Lattice(x_t.height(), x_t.width());
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    out.mean[i] = inv_keep * (x_t[i] - eps_coef * eps_hat[i]);
  }
  out.variance = beta * (1.0 - ab_prev) / (1.0 - ab);
  return out;
}

Lattice g_predict_x0(const Lattice& x_t, const Lattice& eps_hat, int t,
                     const NoiseSchedule& schedule) {
  require_same_shape(x_t, eps_hat, "g_predict_x0");
  const double ab = schedule.alpha_bar(t);
  const double inv_signal = 1.0 / std::sqrt(ab);
  const double spread = std::sqrt(1.0 - ab);
  Lattice out(x_t.height(), x_t.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - spread * eps_hat[i]) * inv_signal;
  return out;
}

Lattice g_ddim_step(const Lattice& x_t, const Lattice& eps_hat, int t, int t_next,
                    const NoiseSchedule& schedule) {
  if (t_next >= t || t_next < 0) {
    throw ContractViolation("g_ddim_step: need 0 <= t_next < t, got t=" + std::to_string(t) +
                            " t_next=" + std::to_string(t_next));
  }
  Lattice x0_hat = g_predict_x0(x_t, eps_hat, t, schedule);
  if (t_next == 0) return x0_hat;
  const double ab_next = schedule.alpha_bar(t_next);
  const double signal = std::sqrt(ab_next);
  const double spread = std::sqrt(1.0 - ab_next);
  for (std::size_t i = 0; i < x0_hat.size(); ++i) x0_hat[i] = signal * x0_hat[i] + spread * eps_hat[i];
  return x0_hat;
}

Lattice g_ancestral_step(const Lattice& x_t, const Lattice& eps_hat, int t,
                         const NoiseSchedule& schedule, const Lattice& noise) {
  require_same_shape(x_t, noise, "g_ancestral_step");
  GaussianReverseParams params = g_posterior_from_eps(x_t, eps_hat, t, schedule);
  const double sigma = std::sqrt(params.variance);
  for (std::size_t i = 0; i < params.mean.size(); ++i) params.mean[i] += sigma * noise[i];
  return params.mean;
}

double g_eps_loss(const Lattice& eps_true, const Lattice& eps_hat) {
  require_same_shape(eps_true, eps_hat, "g_eps_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < eps_true.size(); ++i) {
    const double d = eps_hat[i] - eps_true[i];
    acc += d * d;
  }
  return acc / static_cast<double>(eps_true.size());
}

double g_kl_prior(const GaussianReverseParams& params) {
  if (!(params.variance > 0.0)) {
    throw ContractViolation("g_kl_prior: variance must be positive");
  }
  const double var = params.variance;
  const double constant = var - 1.0 - std::log(var);
  double acc = 0.0;
  for (double mu : params.mean.values()) acc += constant + mu * mu;
  return 0.5 * acc / static_cast<double>(params.mean.size());
}

}  // namespace echodnd
