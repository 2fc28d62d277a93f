// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <vector>

#include "echodnd/lattice.hpp"

namespace echodnd {

struct StapleOptions {
  /// Global foreground prior; defaults to the mean foreground fraction of the
  /// input masks. Ignored when prior_map is set.
  std::optional<double> prior;
  /// Per-pixel prior in (0,1).
  std::optional<Lattice> prior_map;
  double tolerance = 1e-6;
  int max_iterations = 100;
  double initial_sensitivity = 0.95;
  double initial_specificity = 0.95;
};

struct StapleResult {
  Lattice fused_prob;
  std::vector<double> sensitivities;
  std::vector<double> specificities;
  int iterations = 0;
  bool converged = false;
  /// Observed-data log-likelihood after each M-step.
  std::vector<double> log_likelihood;
};

/// Rater performance estimates are clamped to [1e-6, 1−1e-6].
inline constexpr double kStapleClamp = 1e-6;

/// Binary STAPLE: EM over the hidden true label, alternating per-pixel
/// posteriors with per-rater sensitivity/specificity. Needs at least two
/// same-shaped binary masks.
StapleResult staple_fuse(std::span<const Lattice> masks, const StapleOptions& options = {});

/// 1 where prob ≥ threshold, for threshold in (0,1).
Lattice binarize(const Lattice& prob, double threshold = 0.5);

}  // namespace echodnd
