// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace echodnd {

/// Row-major H×W grid of doubles. Holds ground-truth masks, probability maps,
/// Gaussian-chain states and grayscale images alike; which of those a given
/// lattice is gets checked at the operation boundary (see require_binary and
/// require_probability).
class Lattice {
 public:
  Lattice() = default;
  Lattice(int height, int width, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& operator()(int y, int x) { return values_[index(y, x)]; }
  double operator()(int y, int x) const { return values_[index(y, x)]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool same_shape(const Lattice& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Lattice&, const Lattice&) = default;

 private:
  std::size_t index(int y, int x) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
};

bool is_binary(const Lattice& lattice);
bool is_probability(const Lattice& lattice);

void require_same_shape(const Lattice& a, const Lattice& b, std::string_view what);
void require_binary(const Lattice& lattice, std::string_view what);
void require_probability(const Lattice& lattice, std::string_view what);

/// Number of pixels equal to 1.
std::size_t count_foreground(const Lattice& mask);

}  // namespace echodnd
