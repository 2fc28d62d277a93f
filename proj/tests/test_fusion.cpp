// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <array>
#include <vector>

#include "echodnd/errors.hpp"
#include "echodnd/fusion.hpp"
#include "staple_oracle.hpp"
#include "test_util.hpp"

using namespace echodnd;
using namespace echodnd::testing;

namespace {

std::vector<std::vector<int>> as_votes(const std::vector<Lattice>& masks) {
  std::vector<std::vector<int>> votes;
  for (const Lattice& m : masks) {
    std::vector<int> v;
    for (double x : m.values()) v.push_back(x == 1.0 ? 1 : 0);
    votes.push_back(v);
  }
  return votes;
}

double mean_foreground(const std::vector<Lattice>& masks) {
  double total = 0.0;
  for (const Lattice& m : masks) total += static_cast<double>(count_foreground(m));
  return total / static_cast<double>(masks.size() * masks[0].size());
}

}  // namespace

TEST_CASE("unanimous raters reproduce the mask") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Lattice a = random_mask(8, 8, rng, 0.3);
    const std::vector<Lattice> masks{a, a};
    const StapleResult r = staple_fuse(masks);
    CHECK(binarize(r.fused_prob) == a);
  }
}

TEST_CASE("complementary raters cancel") {
  Lattice a(4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) a(y, x) = (x + y) % 2;
  }
  Lattice b = a;
  for (double& v : b.values()) v = 1.0 - v;
  StapleOptions opts;
  opts.prior = 0.5;
  const std::vector<Lattice> masks{a, b};
  const StapleResult r = staple_fuse(masks, opts);
  for (double v : r.fused_prob.values()) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("one dissenting rater against an independent EM") {
  Lattice a(4, 4);
  a(1, 1) = a(1, 2) = a(2, 1) = a(2, 2) = 1.0;
  Lattice dissent = a;
  dissent(0, 0) = 1.0;
  dissent(2, 2) = 0.0;
  const std::vector<Lattice> masks{a, a, dissent};
  const StapleResult r = staple_fuse(masks);
  const std::vector<double> oracle = staple_oracle(as_votes(masks), mean_foreground(masks));
  for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(r.fused_prob[i] - oracle[i]) <= 1e-9);
  CHECK(binarize(r.fused_prob) == a);
}

TEST_CASE("random instances against an independent EM") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Lattice truth = random_mask(8, 8, rng, 0.4);
    std::vector<Lattice> masks;
    for (int j = 0; j < 3; ++j) {
      Lattice m = truth;
      for (double& v : m.values()) {
        if (rng.bernoulli(0.15)) v = 1.0 - v;
      }
      masks.push_back(m);
    }
    const StapleResult r = staple_fuse(masks);
    const std::vector<double> oracle = staple_oracle(as_votes(masks), mean_foreground(masks));
    for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(r.fused_prob[i] - oracle[i]) <= 1e-9);
  }
}

TEST_CASE("fusion is invariant to rater order") {
  Rng rng(3);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Lattice> masks{random_mask(8, 8, rng), random_mask(8, 8, rng), random_mask(8, 8, rng)};
    const StapleResult base = staple_fuse(masks);
    std::array<int, 3> order{0, 1, 2};
    while (std::next_permutation(order.begin(), order.end())) {
      const std::vector<Lattice> permuted{masks[order[0]], masks[order[1]], masks[order[2]]};
      CHECK(max_abs_diff(staple_fuse(permuted).fused_prob, base.fused_prob) <= 1e-12);
    }
  }
}

TEST_CASE("observed-data log-likelihood never decreases") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Lattice truth = random_mask(8, 8, rng, 0.3);
    std::vector<Lattice> masks;
    for (int j = 0; j < 4; ++j) {
      Lattice m = truth;
      for (double& v : m.values()) {
        if (rng.bernoulli(0.1 + 0.05 * j)) v = 1.0 - v;
      }
      masks.push_back(m);
    }
    StapleOptions opts;
    opts.tolerance = 1e-12;
    const StapleResult r = staple_fuse(masks, opts);
    for (std::size_t k = 1; k < r.log_likelihood.size(); ++k) {
      CHECK(r.log_likelihood[k] >= r.log_likelihood[k - 1] - 1e-9);
    }
  }
}

TEST_CASE("iteration cap and convergence flag") {
  Rng rng(5);
  const std::vector<Lattice> masks{random_mask(8, 8, rng), random_mask(8, 8, rng)};
  StapleOptions opts;
  opts.max_iterations = 1;
  opts.tolerance = 1e-300;
  const StapleResult r = staple_fuse(masks, opts);
  CHECK(r.iterations == 1);
  CHECK_FALSE(r.converged);
  CHECK(staple_fuse(masks).converged);
}

TEST_CASE("all-background raters stay finite") {
  const std::vector<Lattice> masks{Lattice(4, 4), Lattice(4, 4), Lattice(4, 4)};
  const StapleResult r = staple_fuse(masks);
  for (double v : r.fused_prob.values()) {
    CHECK(std::isfinite(v));
    CHECK(v < 0.5);
  }
  for (double p : r.sensitivities) CHECK(p >= kStapleClamp);
}

TEST_CASE("staple preconditions") {
  const std::vector<Lattice> one{Lattice(2, 2)};
  CHECK_THROWS_AS(staple_fuse(one), ContractViolation);
  const std::vector<Lattice> mismatched{Lattice(2, 2), Lattice(2, 3)};
  CHECK_THROWS_AS(staple_fuse(mismatched), ContractViolation);
  const std::vector<Lattice> soft{Lattice(2, 2), Lattice(2, 2, 0.5)};
  CHECK_THROWS_AS(staple_fuse(soft), ContractViolation);
}

TEST_CASE("binarize") {
  CHECK(binarize(Lattice(3, 3, 0.5)) == Lattice(3, 3, 1.0));
  Rng rng(6);
  const Lattice m = random_mask(5, 5, rng);
  CHECK(binarize(m) == m);
  Lattice p = random_uniform(6, 6, rng);
  for (double& v : p.values()) {
    if (v == 0.5) v = 0.25;
  }
  Lattice complement = p;
  for (double& v : complement.values()) v = 1.0 - v;
  const Lattice a = binarize(complement);
  const Lattice b = binarize(p);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(a[i] == 1.0 - b[i]);
  CHECK_THROWS_AS(binarize(p, 0.0), ContractViolation);
  CHECK_THROWS_AS(binarize(p, 1.0), ContractViolation);
}

TEST_CASE("rater performance estimates recover the generating values") {
  Rng rng(7);
  const Lattice truth = random_mask(64, 64, rng, 0.35);
  const std::array<std::pair<double, double>, 3> raters{{{0.9, 0.95}, {0.8, 0.9}, {0.95, 0.85}}};
  std::vector<Lattice> masks;
  for (const auto& [sens, spec] : raters) {
    Lattice m = truth;
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = truth[i] == 1.0 ? (rng.bernoulli(sens) ? 1.0 : 0.0) : (rng.bernoulli(spec) ? 0.0 : 1.0);
    }
    masks.push_back(m);
  }
  const StapleResult r = staple_fuse(masks);
  for (std::size_t j = 0; j < raters.size(); ++j) {
    CHECK(std::abs(r.sensitivities[j] - raters[j].first) <= 0.05);
    CHECK(std::abs(r.specificities[j] - raters[j].second) <= 0.05);
  }
}
