// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include "echodnd/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace echodnd::kernels {

#if ECHODND_HAVE_AVX2
const KernelTable& avx2_table_impl();
#endif

const KernelTable* avx2_table() {
#if ECHODND_HAVE_AVX2
  static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
  return supported ? &avx2_table_impl() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

const KernelTable* pick(std::string_view name) {
  if (name == "scalar") return &scalar_table();
  if (name == "avx2") return avx2_table();
  if (name.empty() || name == "auto") {
    const KernelTable* simd = avx2_table();
    return simd != nullptr ? simd : &scalar_table();
  }
  return nullptr;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> table = [] {
    const char* env = std::getenv("ECHODND_KERNELS");
    const KernelTable* chosen = pick(env != nullptr ? env : "auto");
    return chosen != nullptr ? chosen : pick("auto");
  }();
  return table;
}

}  // namespace

const KernelTable& active() { return *current().load(std::memory_order_relaxed); }

bool select(std::string_view name) {
  const KernelTable* table = pick(name);
  if (table == nullptr) return false;
  current().store(table, std::memory_order_relaxed);
  return true;
}

}  // namespace echodnd::kernels
