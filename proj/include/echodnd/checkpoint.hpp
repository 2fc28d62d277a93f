// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "echodnd/model.hpp"
#include "echodnd/pipeline.hpp"

namespace echodnd {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "network" checkpoints carry trained parameters. "oracle" checkpoints carry
/// none and make eval use the ground-truth oracle denoiser (test fixture).
struct Checkpoint {
  std::string model_kind = "network";
  TrainingConfig config;
  ModelParams params;
  std::int64_t step = 0;
  std::string rng_state;
  std::int64_t adam_steps = 0;
  std::vector<double> adam_first;
  std::vector<double> adam_second;
};

/// Layout: magic, u32 version, model kind, schedule descriptors (Gaussian
/// then Bernoulli: kind, T, β_min, β_max), config snapshot text, step
/// counter, RNG state, segment index (length-prefixed UTF-8 names, offsets,
/// lengths), float64 parameter payload, Adam state. Little-endian throughout.
std::string serialize_checkpoint(const Checkpoint& checkpoint);
/// Rejects bad magic, version mismatch, truncation, trailing bytes, and
/// schedule descriptors that disagree with the config snapshot.
Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin = "<memory>");

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint checkpoint_from_trainer(const Trainer& trainer);
/// Builds a trainer on dataset and restores the checkpointed state into it.
Trainer trainer_from_checkpoint(const Checkpoint& checkpoint, std::vector<SampleRecord> dataset);

}  // namespace echodnd
