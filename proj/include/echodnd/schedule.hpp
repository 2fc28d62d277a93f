// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

namespace echodnd {

/// Variance schedule β_t and cumulative products ᾱ_t = ∏_{s≤t}(1−β_s) shared
/// by the Gaussian and Bernoulli chains. Timesteps are 1-based in the API
/// (t ∈ 1..T); storage is 0-based. Immutable after construction.
class NoiseSchedule {
 public:
  /// Linear interpolation from beta_min (t=1) to beta_max (t=T).
  /// Throws ConfigError unless T ≥ 1 and 0 < beta_min ≤ beta_max < 1.
  static NoiseSchedule linear(int steps, double beta_min, double beta_max);

  /// Arbitrary β table with entries in [0, 1). Zero entries give the
  /// degenerate noiseless steps used to test copy behaviour; production code
  /// goes through linear().
  static NoiseSchedule from_betas(std::vector<double> betas);

  int steps() const { return static_cast<int>(betas_.size()); }
  std::span<const double> betas() const { return betas_; }
  std::span<const double> alpha_bars() const { return alpha_bars_; }

  /// β_t for t in 1..T.
  double beta(int t) const;
  /// ᾱ_t for t in 1..T.
  double alpha_bar(int t) const;
  /// ᾱ_t for t in 0..T with ᾱ_0 := 1.
  double alpha_bar_or_one(int t) const;

  const std::string& kind() const { return kind_; }
  double beta_min() const { return beta_min_; }
  double beta_max() const { return beta_max_; }

 private:
  NoiseSchedule() = default;
  void check_timestep(int t, int lo) const;

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  std::string kind_;
  double beta_min_ = 0.0;
  double beta_max_ = 0.0;
};

NoiseSchedule make_linear_schedule(int steps, double beta_min, double beta_max);
double alpha_bar_at(const NoiseSchedule& schedule, int t);

/// Descending sampling timesteps T, T−stride, … down to the last value ≥ 1,
/// followed by a terminal 0. stride = 1 yields T, T−1, …, 1, 0.
std::vector<int> sampling_timesteps(int steps, int stride);

}  // namespace echodnd
