// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include "echodnd/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "echodnd/errors.hpp"

namespace echodnd {
namespace {

double clamp_rate(double v) { return std::clamp(v, kStapleClamp, 1.0 - kStapleClamp); }

}  // namespace

StapleResult staple_fuse(std::span<const Lattice> masks, const StapleOptions& options) {
  if (masks.size() < 2) throw ContractViolation("staple_fuse: need at least two raters");
  for (const Lattice& m : masks) {
    require_same_shape(masks[0], m, "staple_fuse");
    require_binary(m, "staple_fuse");
  }
  if (options.max_iterations < 1 || !(options.tolerance > 0.0)) {
    throw ContractViolation("staple_fuse: need max_iterations >= 1 and tolerance > 0");
  }
  const std::size_t raters = masks.size();
  const std::size_t pixels = masks[0].size();

  std::vector<double> prior(pixels);
  if (options.prior_map) {
    require_same_shape(masks[0], *options.prior_map, "staple_fuse prior map");
    for (std::size_t i = 0; i < pixels; ++i) prior[i] = (*options.prior_map)[i];
  } else {
    double global = 0.0;
    if (options.prior) {
      global = *options.prior;
    } else {
      for (const Lattice& m : masks) global += static_cast<double>(count_foreground(m));
      global /= static_cast<double>(raters * pixels);
    }
    std::fill(prior.begin(), prior.end(), global);
  }
  for (double& p : prior) p = clamp_rate(p);

  StapleResult result;
  result.sensitivities.assign(raters, options.initial_sensitivity);
  result.specificities.assign(raters, options.initial_specificity);
  result.fused_prob = Lattice(masks[0].height(), masks[0].width());
  Lattice& weights = result.fused_prob;

  auto e_step = [&](double* log_likelihood) {
    double max_change = 0.0;
    double ll = 0.0;
    for (std::size_t i = 0; i < pixels; ++i) {
      double fg = prior[i];
      double bg = 1.0 - prior[i];
      for (std::size_t j = 0; j < raters; ++j) {
        const bool vote = masks[j][i] == 1.0;
        fg *= vote ? result.sensitivities[j] : 1.0 - result.sensitivities[j];
        bg *= vote ? 1.0 - result.specificities[j] : result.specificities[j];
      }
      const double w = fg / (fg + bg);
      max_change = std::max(max_change, std::abs(w - weights[i]));
      weights[i] = w;
      ll += std::log(fg + bg);
    }
    if (log_likelihood != nullptr) *log_likelihood = ll;
    return max_change;
  };

  e_step(nullptr);
  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    double total_fg = 0.0;
    double total_bg = 0.0;
    for (std::size_t i = 0; i < pixels; ++i) {
      total_fg += weights[i];
      total_bg += 1.0 - weights[i];
    }
    for (std::size_t j = 0; j < raters; ++j) {
      double hit = 0.0;
      double reject = 0.0;
      for (std::size_t i = 0; i < pixels; ++i) {
        if (masks[j][i] == 1.0) {
          hit += weights[i];
        } else {
          reject += 1.0 - weights[i];
        }
      }
      result.sensitivities[j] = clamp_rate(total_fg > 0.0 ? hit / total_fg : 1.0);
      result.specificities[j] = clamp_rate(total_bg > 0.0 ? reject / total_bg : 1.0);
    }
    double ll = 0.0;
    const double change = e_step(&ll);
    result.log_likelihood.push_back(ll);
    result.iterations = iter;
    if (change < options.tolerance) {
      result.converged = true;
      break;
    }
  }
  return result;
}

Lattice binarize(const Lattice& prob, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw ContractViolation("binarize: threshold must lie in (0,1)");
  }
  Lattice out(prob.height(), prob.width());
  for (std::size_t i = 0; i < prob.size(); ++i) out[i] = prob[i] >= threshold ? 1.0 : 0.0;
  return out;
}

}  // namespace echodnd
