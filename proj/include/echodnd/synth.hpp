// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "echodnd/lattice.hpp"

namespace echodnd {

/// Generator parameters of one synthetic record.
struct SampleMeta {
  double center_y = 0.0;
  double center_x = 0.0;
  double axis_a = 0.0;
  double axis_b = 0.0;
  double rotation = 0.0;
  std::uint64_t noise_seed = 0;
};

struct SampleRecord {
  Lattice image;
  Lattice mask;
  SampleMeta meta;
};

struct SynthOptions {
  /// Sanity mode: image is the Gaussian-smoothed mask and nothing else.
  bool zero_noise = false;
  double speckle = 0.25;
  double additive = 0.06;
  double gradient = 0.15;
  double background = 0.15;
  double contrast = 0.7;
};

/// Rotated filled ellipses standing in for the LV blood pool, rendered into a
/// speckled, noisy, unevenly lit grayscale image. Deterministic in seed.
/// Requires side divisible by 4 and n ≥ 1.
std::vector<SampleRecord> synth_dataset(int n, int side, std::uint64_t seed,
                                        const SynthOptions& options = {});

/// Separable Gaussian blur (σ = 1, radius 2, clamped edges).
Lattice smooth(const Lattice& input);

/// Mirror left-right.
Lattice flip_horizontal(const Lattice& input);

}  // namespace echodnd
