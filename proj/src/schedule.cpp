// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include "echodnd/schedule.hpp"

#include <string>

#include "echodnd/errors.hpp"

namespace echodnd {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_min, double beta_max) {
  if (steps < 1) throw ConfigError("schedule: T must be >= 1, got " + std::to_string(steps));
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) {
    throw ConfigError("schedule: require 0 < beta_min <= beta_max < 1, got beta_min=" +
                      std::to_string(beta_min) + " beta_max=" + std::to_string(beta_max));
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    betas[i] = steps == 1 ? beta_min
                          : beta_min + (beta_max - beta_min) * static_cast<double>(i) /
                                           static_cast<double>(steps - 1);
  }
  if (steps > 1) betas.back() = beta_max;
  NoiseSchedule schedule = from_betas(std::move(betas));
  schedule.kind_ = "linear";
  schedule.beta_min_ = beta_min;
  schedule.beta_max_ = beta_max;
  return schedule;
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ConfigError("schedule: empty beta table");
  NoiseSchedule schedule;
  schedule.alpha_bars_.resize(betas.size());
  double running = 1.0;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] >= 0.0 && betas[i] < 1.0)) {
      throw ConfigError("schedule: beta[" + std::to_string(i) + "] outside [0,1)");
    }
    running *= 1.0 - betas[i];
    schedule.alpha_bars_[i] = running;
  }
  schedule.beta_min_ = betas.front();
  schedule.beta_max_ = betas.back();
  schedule.betas_ = std::move(betas);
  schedule.kind_ = "table";
  return schedule;
}

void NoiseSchedule::check_timestep(int t, int lo) const {
  if (t < lo || t > steps()) {
    throw ContractViolation("timestep " + std::to_string(t) + " outside " +
                            std::to_string(lo) + ".." + std::to_string(steps()));
  }
}

double NoiseSchedule::beta(int t) const {
  check_timestep(t, 1);
  return betas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_timestep(t, 1);
  return alpha_bars_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_or_one(int t) const {
  check_timestep(t, 0);
  return t == 0 ? 1.0 : alpha_bars_[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule make_linear_schedule(int steps, double beta_min, double beta_max) {
  return NoiseSchedule::linear(steps, beta_min, beta_max);
}

double alpha_bar_at(const NoiseSchedule& schedule, int t) { return schedule.alpha_bar(t); }

std::vector<int> sampling_timesteps(int steps, int stride) {
  if (steps < 1 || stride < 1) throw ConfigError("sampling_timesteps: steps and stride must be >= 1");
  std::vector<int> out;
  for (int t = steps; t >= 1; t -= stride) out.push_back(t);
  out.push_back(0);
  return out;
}

}  // namespace echodnd
