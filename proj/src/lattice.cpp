// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include "echodnd/lattice.hpp"

#include <algorithm>
#include <string>

#include "echodnd/errors.hpp"

namespace echodnd {

Lattice::Lattice(int height, int width, double fill) : height_(height), width_(width) {
  if (height <= 0 || width <= 0) {
    throw ContractViolation("lattice dimensions must be positive, got " +
                            std::to_string(height) + "x" + std::to_string(width));
  }
  values_.assign(static_cast<std::size_t>(height) * static_cast<std::size_t>(width), fill);
}

bool is_binary(const Lattice& lattice) {
  return std::all_of(lattice.values().begin(), lattice.values().end(),
                     [](double v) { return v == 0.0 || v == 1.0; });
}

bool is_probability(const Lattice& lattice) {
  return std::all_of(lattice.values().begin(), lattice.values().end(),
                     [](double v) { return v >= 0.0 && v <= 1.0; });
}

void require_same_shape(const Lattice& a, const Lattice& b, std::string_view what) {
  if (!a.same_shape(b)) {
    throw ContractViolation(std::string(what) + ": shape mismatch " +
                            std::to_string(a.height()) + "x" + std::to_string(a.width()) +
                            " vs " + std::to_string(b.height()) + "x" +
                            std::to_string(b.width()));
  }
}

void require_binary(const Lattice& lattice, std::string_view what) {
  if (!is_binary(lattice)) {
    throw ContractViolation(std::string(what) + ": expected a binary {0,1} lattice");
  }
}

void require_probability(const Lattice& lattice, std::string_view what) {
  if (!is_probability(lattice)) {
    throw ContractViolation(std::string(what) + ": expected values in [0,1]");
  }
}

std::size_t count_foreground(const Lattice& mask) {
  return static_cast<std::size_t>(
      std::count(mask.values().begin(), mask.values().end(), 1.0));
}

}  // namespace echodnd
