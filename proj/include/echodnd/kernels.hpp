// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string_view>

namespace echodnd::kernels {

// Data-parallel double-precision inner loops used by the convolution,
// attention and elementwise layers. Every ISA variant must agree with the
// scalar reference to rounding (see tests/kernels_test.cpp); summation order
// differs between variants, so results are bit-stable per variant only.
struct KernelTable {
  const char* name;
  // y[i] += a * x[i]
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += a[i] * b[i]
  void (*mul_acc)(const double* a, const double* b, double* y, std::size_t n);
  // sum_i x[i]
  double (*sum)(const double* x, std::size_t n);
};

const KernelTable& scalar_table();
/// nullptr when the binary or the CPU lacks AVX2+FMA.
const KernelTable* avx2_table();

/// Table chosen at first use: AVX2 when available, unless the environment
/// variable ECHODND_KERNELS=scalar forces the reference path.
const KernelTable& active();

/// Override the active table ("scalar", "avx2" or "auto"). Returns false if
/// the request cannot be honoured on this machine.
bool select(std::string_view name);

inline void axpy(double a, const double* x, double* y, std::size_t n) { active().axpy(a, x, y, n); }
inline double dot(const double* x, const double* y, std::size_t n) { return active().dot(x, y, n); }
inline void mul_acc(const double* a, const double* b, double* y, std::size_t n) { active().mul_acc(a, b, y, n); }
inline double sum(const double* x, std::size_t n) { return active().sum(x, n); }

}  // namespace echodnd::kernels
