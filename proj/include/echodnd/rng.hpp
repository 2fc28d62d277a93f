// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace echodnd {

/// Seeded generator with stateless variate conversions, so that the engine
/// state alone determines every future draw. That makes save/restore exact,
/// which std::normal_distribution (it caches a spare deviate) would not be.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Independent stream derived from (seed, name, index). All randomness in a
  /// run hangs off one seed through named substreams ("data", "init",
  /// "train", "sample").
  static Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double normal();
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);
  bool bernoulli(double p) { return uniform() < p; }

  std::string save_state() const;
  void restore_state(const std::string& state);

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

/// 64-bit FNV-1a; stable across platforms unlike std::hash.
std::uint64_t fnv1a(std::string_view text);

}  // namespace echodnd
