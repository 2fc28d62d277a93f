// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <bit>
#include <cstring>
#include <string>

#include "echodnd/checkpoint.hpp"
#include "echodnd/errors.hpp"
#include "test_util.hpp"

using namespace echodnd;
using namespace echodnd::testing;

namespace {

TrainingConfig tiny_config() {
  TrainingConfig c;
  c.diffusion_steps = 50;
  c.batch_size = 2;
  c.learning_rate = 1e-3;
  c.model.base_channels = 4;
  c.model.cond_channels = 4;
  c.model.time_dim = 8;
  return c;
}

std::string trained_bytes(int steps) {
  Trainer trainer(tiny_config(), synth_dataset(4, 8, 1));
  for (int i = 0; i < steps; ++i) trainer.step();
  return serialize_checkpoint(checkpoint_from_trainer(trainer));
}

std::string le_double(double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::string out(8, '\0');
  for (int i = 0; i < 8; ++i) out[static_cast<std::size_t>(i)] = static_cast<char>((bits >> (8 * i)) & 0xff);
  return out;
}

}  // namespace

TEST_CASE("header layout") {
  const std::string bytes = trained_bytes(1);
  CHECK(bytes.substr(0, 8) == std::string("ECHODND\0", 8));
  CHECK(static_cast<unsigned char>(bytes[8]) == kCheckpointVersion);
  CHECK(bytes[9] == 0);
  CHECK(bytes[12] == 7);
  CHECK(bytes.substr(16, 7) == "network");
}

TEST_CASE("save, load, save is byte-identical") {
  TempDir dir;
  const std::string bytes = trained_bytes(3);
  const Checkpoint c = deserialize_checkpoint(bytes);
  CHECK(c.step == 3);
  CHECK(c.adam_steps == 3);
  CHECK(c.config == tiny_config());
  CHECK(serialize_checkpoint(c) == bytes);
  save_checkpoint(dir.file("a.ckpt"), c);
  CHECK(slurp(dir.file("a.ckpt")) == bytes);
  const Checkpoint loaded = load_checkpoint(dir.file("a.ckpt"));
  CHECK(loaded.params == c.params);
  CHECK(loaded.rng_state == c.rng_state);
  save_checkpoint(dir.file("b.ckpt"), loaded);
  CHECK(slurp(dir.file("b.ckpt")) == bytes);
}

TEST_CASE("oracle checkpoints carry no parameters") {
  Checkpoint c;
  c.model_kind = "oracle";
  c.config = tiny_config();
  const std::string bytes = serialize_checkpoint(c);
  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(back.model_kind == "oracle");
  CHECK(back.params.size() == 0);
  CHECK(serialize_checkpoint(back) == bytes);
  CHECK_THROWS_AS(trainer_from_checkpoint(back, synth_dataset(2, 8, 1)), ConfigError);
  c.model_kind = "mystery";
  CHECK_THROWS_AS(serialize_checkpoint(c), ContractViolation);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string bytes = trained_bytes(1);

  std::string version = bytes;
  version[8] = static_cast<char>(kCheckpointVersion + 1);
  CHECK_THROWS_AS(deserialize_checkpoint(version), IoError);
  try {
    deserialize_checkpoint(version, "model.ckpt");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
    CHECK(std::string(e.what()).find("model.ckpt") != std::string::npos);
  }

  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint(magic), IoError);
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{40}, bytes.size() / 2, bytes.size() - 1}) {
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, cut)), IoError);
  }
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + '\0'), IoError);

  // A schedule descriptor that disagrees with the config snapshot.
  std::string schedule = bytes;
  const auto at = schedule.find(le_double(0.02));
  REQUIRE(at != std::string::npos);
  schedule.replace(at, 8, le_double(0.03));
  CHECK_THROWS_AS(deserialize_checkpoint(schedule), IoError);

  TempDir dir;
  CHECK_THROWS_AS(load_checkpoint(dir.file("missing.ckpt")), IoError);
}

TEST_CASE("resumed training matches uninterrupted training") {
  Rng pick(2);
  for (int trial = 0; trial < 6; ++trial) {
    TrainingConfig config = tiny_config();
    config.seed = pick.next_u64();
    config.noise = static_cast<NoiseMode>(pick.uniform_int(0, 2));
    config.hflip = pick.bernoulli(0.5);
    const int total = pick.uniform_int(1, 6);
    const int split = pick.uniform_int(0, total);
    const auto data = synth_dataset(4, 8, static_cast<std::uint64_t>(trial));

    Trainer straight(config, data);
    std::vector<double> expected;
    for (int i = 0; i < total; ++i) expected.push_back(straight.step().total);

    Trainer first(config, data);
    std::vector<double> seen;
    for (int i = 0; i < split; ++i) seen.push_back(first.step().total);
    const std::string bytes = serialize_checkpoint(checkpoint_from_trainer(first));
    Trainer resumed = trainer_from_checkpoint(deserialize_checkpoint(bytes), data);
    CHECK(resumed.step_count() == split);
    CHECK(serialize_checkpoint(checkpoint_from_trainer(resumed)) == bytes);
    for (int i = split; i < total; ++i) seen.push_back(resumed.step().total);

    CHECK(seen == expected);
    CHECK(resumed.params() == straight.params());
    CHECK(serialize_checkpoint(checkpoint_from_trainer(resumed)) ==
          serialize_checkpoint(checkpoint_from_trainer(straight)));
  }
}
