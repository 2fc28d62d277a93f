// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include "echodnd/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "echodnd/errors.hpp"
#include "echodnd/rng.hpp"

namespace echodnd {
namespace {

constexpr double kMinForeground = 0.02;
constexpr double kMaxForeground = 0.60;

Lattice render_ellipse(int side, const SampleMeta& meta) {
  Lattice mask(side, side);
  const double c = std::cos(meta.rotation);
  const double s = std::sin(meta.rotation);
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double dy = y + 0.5 - meta.center_y;
      const double dx = x + 0.5 - meta.center_x;
      const double u = (c * dx + s * dy) / meta.axis_a;
      const double v = (-s * dx + c * dy) / meta.axis_b;
      mask(y, x) = u * u + v * v <= 1.0 ? 1.0 : 0.0;
    }
  }
  return mask;
}

}  // namespace

Lattice smooth(const Lattice& input) {
  static const std::array<double, 5> taps = [] {
    std::array<double, 5> k{};
    double total = 0.0;
    for (int i = -2; i <= 2; ++i) {
      k[i + 2] = std::exp(-0.5 * i * i);
      total += k[i + 2];
    }
    for (double& v : k) v /= total;
    return k;
  }();
  const int h = input.height();
  const int w = input.width();
  Lattice rows(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -2; i <= 2; ++i) acc += taps[i + 2] * input(y, std::clamp(x + i, 0, w - 1));
      rows(y, x) = acc;
    }
  }
  Lattice out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -2; i <= 2; ++i) acc += taps[i + 2] * rows(std::clamp(y + i, 0, h - 1), x);
      out(y, x) = acc;
    }
  }
  return out;
}

Lattice flip_horizontal(const Lattice& input) {
  Lattice out(input.height(), input.width());
  for (int y = 0; y < input.height(); ++y) {
    for (int x = 0; x < input.width(); ++x) out(y, x) = input(y, input.width() - 1 - x);
  }
  return out;
}

std::vector<SampleRecord> synth_dataset(int n, int side, std::uint64_t seed,
                                        const SynthOptions& options) {
  if (n < 1) throw ConfigError("synth_dataset: n must be >= 1");
  if (side < 4 || side % 4 != 0) {
    throw ConfigError("synth_dataset: side must be a positive multiple of 4, got " +
                      std::to_string(side));
  }
  std::vector<SampleRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  const double half = 0.5 * side;
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::substream(seed, "data", static_cast<std::uint64_t>(i));
    SampleRecord record;
    for (;;) {
      SampleMeta& m = record.meta;
      m.center_y = half + (2.0 * rng.uniform() - 1.0) * side / 8.0;
      m.center_x = half + (2.0 * rng.uniform() - 1.0) * side / 8.0;
      m.axis_a = side / 6.0 + rng.uniform() * (side / 3.0 - side / 6.0);
      m.axis_b = side / 6.0 + rng.uniform() * (side / 3.0 - side / 6.0);
      m.rotation = rng.uniform() * std::numbers::pi;
      record.mask = render_ellipse(side, m);
      const double fraction = static_cast<double>(count_foreground(record.mask)) /
                              static_cast<double>(record.mask.size());
      if (fraction >= kMinForeground && fraction <= kMaxForeground) break;
    }
    record.meta.noise_seed = rng.next_u64();

    const Lattice blurred = smooth(record.mask);
    if (options.zero_noise) {
      record.image = blurred;
    } else {
      Rng noise(record.meta.noise_seed);
      const double tilt = options.gradient * (2.0 * noise.uniform() - 1.0);
      const double angle = noise.uniform() * 2.0 * std::numbers::pi;
      const double gc = std::cos(angle);
      const double gs = std::sin(angle);
      record.image = Lattice(side, side);
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          const double base = options.background + options.contrast * blurred(y, x);
          const double speckle = 1.0 + options.speckle * noise.normal();
          const double ramp = ((x + 0.5 - half) * gc + (y + 0.5 - half) * gs) / side;
          const double v = base * speckle + options.additive * noise.normal() + tilt * ramp;
          record.image(y, x) = std::clamp(v, 0.0, 1.0);
        }
      }
    }
    out.push_back(std::move(record));
  }
  return out;
}

}  // namespace echodnd
