// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "echodnd/pipeline.hpp"

namespace echodnd {

std::string to_string(NoiseMode mode);
std::string to_string(LossMode mode);
std::string to_string(SamplerKind kind);
NoiseMode parse_noise_mode(std::string_view text);
LossMode parse_loss_mode(std::string_view text);
SamplerKind parse_sampler(std::string_view text);

/// Every key accepted by apply_setting, in the order format_config writes them.
const std::vector<std::string>& config_keys();

/// Set one key from its textual value. Throws ConfigError naming the key for
/// unknown keys and malformed values.
void apply_setting(TrainingConfig& config, std::string_view key, std::string_view value);

/// Flat key=value lines; '#' starts a comment line. Keys not mentioned keep
/// their defaults. Errors name the source, line and key. The result is
/// validated.
TrainingConfig parse_config(std::string_view text, std::string_view source = "<config>");
TrainingConfig load_config(const std::string& path);

/// Every key, one per line, doubles in shortest round-trip form, so
/// parse_config(format_config(c)) == c.
std::string format_config(const TrainingConfig& config);

/// Shortest round-trip decimal form of a double.
std::string format_double(double value);

}  // namespace echodnd
