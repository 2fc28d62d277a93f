// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include "echodnd/bernoulli_diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "echodnd/errors.hpp"

namespace echodnd {
namespace {

// Likelihoods q(x_t = bit | x_s = 1) and q(x_t = bit | x_s = 0) for a
// transition with flip weight gamma.
struct Likelihoods {
  double given_one;
  double given_zero;
};

Likelihoods likelihoods(int x_t_bit, double gamma) {
  const double stay = 1.0 - 0.5 * gamma;
  const double flip = 0.5 * gamma;
  return x_t_bit == 1 ? Likelihoods{stay, flip} : Likelihoods{flip, stay};
}

void require_bit(int bit) {
  if (bit != 0 && bit != 1) throw ContractViolation("expected a binary x_t value");
}

double posterior(int x_t_bit, double x0_prob, double gamma, double ab_prev) {
  require_bit(x_t_bit);
  const Likelihoods lk = likelihoods(x_t_bit, gamma);
  const double prior_one = ab_prev * x0_prob + 0.5 * (1.0 - ab_prev);
  const double one = lk.given_one * prior_one;
  const double zero = lk.given_zero * (1.0 - prior_one);
  const double norm = one + zero;
  if (!(norm > 0.0)) throw NumericalError("Bernoulli posterior normalizer vanished");
  return one / norm;
}

}  // namespace

Lattice b_forward_step(const Lattice& x_prev, int t, const NoiseSchedule& schedule, Rng& rng) {
  require_binary(x_prev, "b_forward_step");
  const double beta = schedule.beta(t);
  Lattice out(x_prev.height(), x_prev.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = rng.bernoulli((1.0 - beta) * x_prev[i] + 0.5 * beta) ? 1.0 : 0.0;
  }
  return out;
}

Lattice b_forward_marginal_prob(const Lattice& x0, int t, const NoiseSchedule& schedule) {
  require_probability(x0, "b_forward_marginal_prob");
  const double ab = schedule.alpha_bar(t);
  Lattice out(x0.height(), x0.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ab * x0[i] + 0.5 * (1.0 - ab);
  return out;
}

double b_posterior_prob(int x_t_bit, double x0_prob, int t, const NoiseSchedule& schedule) {
  if (t < 2) throw ContractViolation("b_posterior_prob: t must be >= 2");
  return posterior(x_t_bit, x0_prob, schedule.beta(t), schedule.alpha_bar(t - 1));
}

double b_posterior_prob_between(int x_t_bit, double x0_prob, int t, int s,
                                const NoiseSchedule& schedule) {
  if (s < 1 || s >= t) {
    throw ContractViolation("b_posterior_prob_between: need 1 <= s < t, got t=" +
                            std::to_string(t) + " s=" + std::to_string(s));
  }
  const double gamma = s == t - 1 ? schedule.beta(t)
                                  : 1.0 - schedule.alpha_bar(t) / schedule.alpha_bar(s);
  return posterior(x_t_bit, x0_prob, gamma, schedule.alpha_bar(s));
}

double b_posterior_prob_grad(int x_t_bit, double x0_prob, int t, const NoiseSchedule& schedule) {
  if (t < 2) throw ContractViolation("b_posterior_prob_grad: t must be >= 2");
  require_bit(x_t_bit);
  const double ab_prev = schedule.alpha_bar(t - 1);
  const Likelihoods lk = likelihoods(x_t_bit, schedule.beta(t));
  const double prior_one = ab_prev * x0_prob + 0.5 * (1.0 - ab_prev);
  const double norm = lk.given_one * prior_one + lk.given_zero * (1.0 - prior_one);
  if (!(norm > 0.0)) throw NumericalError("Bernoulli posterior normalizer vanished");
  return ab_prev * lk.given_one * lk.given_zero / (norm * norm);
}

Lattice sample_bernoulli(const Lattice& prob, Rng& rng) {
  Lattice out(prob.height(), prob.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.bernoulli(prob[i]) ? 1.0 : 0.0;
  return out;
}

Lattice threshold_half(const Lattice& prob) {
  Lattice out(prob.height(), prob.width());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = prob[i] >= 0.5 ? 1.0 : 0.0;
  return out;
}

Lattice b_reverse_step(const Lattice& x_t, const Lattice& x0_prob_hat, int t,
                       const NoiseSchedule& schedule, Rng& rng) {
  return b_reverse_step_between(x_t, x0_prob_hat, t, t - 1, schedule, rng);
}

Lattice b_reverse_step_between(const Lattice& x_t, const Lattice& x0_prob_hat, int t, int t_next,
                               const NoiseSchedule& schedule, Rng& rng) {
  require_same_shape(x_t, x0_prob_hat, "b_reverse_step");
  require_binary(x_t, "b_reverse_step");
  require_probability(x0_prob_hat, "b_reverse_step");
  if (t < 1 || t > schedule.steps()) throw ContractViolation("b_reverse_step: t out of range");
  if (t_next == 0) return threshold_half(x0_prob_hat);
  Lattice out(x_t.height(), x_t.width());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = b_posterior_prob_between(static_cast<int>(x_t[i]), x0_prob_hat[i], t, t_next, schedule);
    out[i] = rng.bernoulli(p) ? 1.0 : 0.0;
  }
  return out;
}

double b_bce_loss(const Lattice& x0, const Lattice& x0_prob_hat) {
  require_same_shape(x0, x0_prob_hat, "b_bce_loss");
  double acc = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double p = std::clamp(x0_prob_hat[i], kBceClamp, 1.0 - kBceClamp);
    acc -= x0[i] * std::log(p) + (1.0 - x0[i]) * std::log(1.0 - p);
  }
  return acc / static_cast<double>(x0.size());
}

double b_kl_prior(const Lattice& prob) {
  require_probability(prob, "b_kl_prior");
  double acc = 0.0;
  for (double p : prob.values()) {
    if (p > 0.0) acc += p * std::log(2.0 * p);
    if (p < 1.0) acc += (1.0 - p) * std::log(2.0 * (1.0 - p));
  }
  return acc / static_cast<double>(prob.size());
}

}  // namespace echodnd
