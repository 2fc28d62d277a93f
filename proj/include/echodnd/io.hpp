// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "echodnd/lattice.hpp"
#include "echodnd/synth.hpp"

namespace echodnd {

/// Binary 8-bit PGM (P5). Values in [0,1] are scaled by 255 and rounded.
void write_pgm(const std::string& path, const Lattice& image);
/// Returns values v/255.
Lattice read_pgm(const std::string& path);

/// Mask files hold {0,255}; anything else is rejected on read.
void write_mask_pgm(const std::string& path, const Lattice& mask);
Lattice read_mask_pgm(const std::string& path);

struct DatasetInfo {
  int n = 0;
  int side = 0;
  std::uint64_t seed = 0;
  SynthOptions options;
};

/// image_NNNN.pgm, mask_NNNN.pgm and metadata.txt (UTF-8 key=value lines with
/// the generator parameters and each record's ellipse and noise seed).
void write_dataset(const std::string& dir, const DatasetInfo& info,
                   const std::vector<SampleRecord>& records);

/// Images come back 8-bit quantized.
std::vector<SampleRecord> read_dataset(const std::string& dir);

}  // namespace echodnd
