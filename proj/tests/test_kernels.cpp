// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "echodnd/kernels.hpp"
#include "echodnd/rng.hpp"

using namespace echodnd;
namespace k = echodnd::kernels;

namespace {

std::vector<double> draw(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

// Reductions may reassociate; bound the difference by the summed magnitudes.
double reduction_tolerance(const std::vector<double>& terms) {
  double mass = 0.0;
  for (double t : terms) mass += std::abs(t);
  return 4.0 * static_cast<double>(terms.size() + 1) * std::numeric_limits<double>::epsilon() * (mass + 1.0);
}

}  // namespace

TEST_CASE("scalar table is complete") {
  const k::KernelTable& s = k::scalar_table();
  CHECK(s.axpy != nullptr);
  CHECK(s.dot != nullptr);
  CHECK(s.mul_acc != nullptr);
  CHECK(s.sum != nullptr);
}

TEST_CASE("scalar kernels against plain loops") {
  Rng rng(2);
  const auto& s = k::scalar_table();
  const auto x = draw(37, rng);
  auto y = draw(37, rng);
  auto expect = y;
  for (std::size_t i = 0; i < x.size(); ++i) expect[i] += 0.7 * x[i];
  s.axpy(0.7, x.data(), y.data(), y.size());
  CHECK(y == expect);
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) d += x[i] * expect[i];
  CHECK(s.dot(x.data(), expect.data(), x.size()) == doctest::Approx(d).epsilon(1e-13));
}

TEST_CASE("avx2 kernels match scalar kernels") {
  const k::KernelTable* simd = k::avx2_table();
  if (simd == nullptr) {
    MESSAGE("AVX2+FMA not available; SIMD equivalence skipped");
    return;
  }
  const auto& s = k::scalar_table();
  Rng rng(4);
  for (std::size_t n = 0; n <= 70; ++n) {
    for (std::size_t offset = 0; offset < 3; ++offset) {
      const auto xs = draw(n + offset, rng);
      const auto ys = draw(n + offset, rng);
      const auto bs = draw(n + offset, rng);
      const double* x = xs.data() + offset;
      const double* b = bs.data() + offset;

      auto y1 = ys;
      auto y2 = ys;
      s.axpy(-1.3, x, y1.data() + offset, n);
      simd->axpy(-1.3, x, y2.data() + offset, n);
      for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));

      y1 = ys;
      y2 = ys;
      s.mul_acc(x, b, y1.data() + offset, n);
      simd->mul_acc(x, b, y2.data() + offset, n);
      for (std::size_t i = 0; i < y1.size(); ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));

      std::vector<double> products(n);
      for (std::size_t i = 0; i < n; ++i) products[i] = x[i] * b[i];
      CHECK(std::abs(s.dot(x, b, n) - simd->dot(x, b, n)) <= reduction_tolerance(products));
      const std::vector<double> terms(x, x + n);
      CHECK(std::abs(s.sum(x, n) - simd->sum(x, n)) <= reduction_tolerance(terms));
    }
  }
}

TEST_CASE("runtime selection") {
  const char* original = k::active().name;
  CHECK(k::select("scalar"));
  CHECK(std::string(k::active().name) == "scalar");
  CHECK_FALSE(k::select("neon"));
  CHECK(std::string(k::active().name) == "scalar");
  CHECK(k::select("auto"));
  if (k::avx2_table() != nullptr) {
    CHECK(std::string(k::active().name) == "avx2");
  }
  CHECK(k::select(original));
}
