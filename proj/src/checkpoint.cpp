// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include "echodnd/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <tuple>

#include "echodnd/config.hpp"
#include "echodnd/errors.hpp"

namespace echodnd {
namespace {

constexpr char kMagic[8] = {'E', 'C', 'H', 'O', 'D', 'N', 'D', '\0'};

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void i64(std::int64_t v) { put(static_cast<std::uint64_t>(v), 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const char* data, std::size_t n) { out_.append(data, n); }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& origin) : bytes_(bytes), origin_(origin) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::int64_t i64() { return static_cast<std::int64_t>(get(8)); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<double> f64s(std::uint64_t n) {
    need(n * 8);
    std::vector<double> v(n);
    for (double& x : v) x = f64();
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void fail(const std::string& what) const { throw IoError(origin_ + ": " + what); }

 private:
  void need(std::uint64_t n) const {
    if (n > bytes_.size() - pos_) fail("truncated checkpoint");
  }
  std::uint64_t get(int bytes) {
    need(static_cast<std::uint64_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }
  const std::string& bytes_;
  const std::string& origin_;
  std::size_t pos_ = 0;
};

void write_schedule(Writer& w, const NoiseSchedule& s) {
  w.str(s.kind());
  w.u32(static_cast<std::uint32_t>(s.steps()));
  w.f64(s.beta_min());
  w.f64(s.beta_max());
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  if (c.model_kind != "network" && c.model_kind != "oracle") {
    throw ContractViolation("checkpoint model kind must be network or oracle");
  }
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  w.str(c.model_kind);
  write_schedule(w, c.config.gaussian_schedule());
  write_schedule(w, c.config.bernoulli_schedule());
  w.str(format_config(c.config));
  w.i64(c.step);
  w.str(c.rng_state);
  const auto& segments = c.params.segments();
  w.u64(segments.size());
  for (const auto& s : segments) {
    w.str(s.name);
    w.u64(s.offset);
    w.u64(s.length);
  }
  w.u64(c.params.size());
  for (double v : c.params.values()) w.f64(v);
  w.i64(c.adam_steps);
  if (c.adam_first.size() != c.adam_second.size()) throw ContractViolation("checkpoint: Adam moment sizes differ");
  w.u64(c.adam_first.size());
  for (double v : c.adam_first) w.f64(v);
  for (double v : c.adam_second) w.f64(v);
  return w.take();
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& origin) {
  Reader r(bytes, origin);
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    r.fail("not a checkpoint file (bad magic)");
  }
  r.raw(sizeof(kMagic));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    r.fail("checkpoint version " + std::to_string(version) + " is not supported (expected " +
           std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  c.model_kind = r.str();
  if (c.model_kind != "network" && c.model_kind != "oracle") r.fail("unknown model kind '" + c.model_kind + "'");
  // Descriptors are checked once the config snapshot is known.
  std::vector<std::tuple<std::string, std::uint32_t, double, double>> descriptors;
  for (int i = 0; i < 2; ++i) {
    std::string kind = r.str();
    const std::uint32_t steps = r.u32();
    const double bmin = r.f64();
    const double bmax = r.f64();
    descriptors.emplace_back(std::move(kind), steps, bmin, bmax);
  }
  try {
    c.config = parse_config(r.str(), origin + " (config snapshot)");
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }
  const NoiseSchedule expected[2] = {c.config.gaussian_schedule(), c.config.bernoulli_schedule()};
  for (int i = 0; i < 2; ++i) {
    const auto& [kind, steps, bmin, bmax] = descriptors[static_cast<std::size_t>(i)];
    if (kind != expected[i].kind() || static_cast<int>(steps) != expected[i].steps() ||
        bmin != expected[i].beta_min() || bmax != expected[i].beta_max()) {
      r.fail(std::string(i == 0 ? "Gaussian" : "Bernoulli") + " schedule descriptor disagrees with the config snapshot");
    }
  }
  c.step = r.i64();
  c.rng_state = r.str();
  const std::uint64_t segment_count = r.u64();
  std::vector<ModelParams::Segment> segments;
  for (std::uint64_t i = 0; i < segment_count; ++i) {
    ModelParams::Segment s;
    s.name = r.str();
    s.offset = r.u64();
    s.length = r.u64();
    segments.push_back(std::move(s));
  }
  const std::uint64_t payload = r.u64();
  std::vector<double> values = r.f64s(payload);
  std::size_t expected_offset = 0;
  for (const auto& s : segments) {
    if (s.offset != expected_offset) r.fail("segment index does not tile the payload at '" + s.name + "'");
    const std::size_t index = c.params.add_segment(s.name, s.length);
    expected_offset += s.length;
    auto dst = c.params.segment_values(index);
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(s.offset),
              values.begin() + static_cast<std::ptrdiff_t>(s.offset + s.length), dst.begin());
  }
  if (expected_offset != payload) r.fail("segment index does not cover the payload");
  c.adam_steps = r.i64();
  const std::uint64_t moments = r.u64();
  c.adam_first = r.f64s(moments);
  c.adam_second = r.f64s(moments);
  if (!r.done()) r.fail("trailing bytes after checkpoint payload");
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw IoError("cannot move checkpoint into place at " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return deserialize_checkpoint(buffer.str(), path);
}

Checkpoint checkpoint_from_trainer(const Trainer& trainer) {
  Checkpoint c;
  c.config = trainer.config();
  c.params = trainer.params();
  c.step = trainer.step_count();
  c.rng_state = trainer.rng().save_state();
  c.adam_steps = trainer.optimizer().steps();
  c.adam_first = trainer.optimizer().first_moment();
  c.adam_second = trainer.optimizer().second_moment();
  return c;
}

Trainer trainer_from_checkpoint(const Checkpoint& checkpoint, std::vector<SampleRecord> dataset) {
  if (checkpoint.model_kind != "network") throw ConfigError("cannot train from an oracle checkpoint");
  Trainer trainer(checkpoint.config, std::move(dataset));
  AdamW optimizer(checkpoint.params.size());
  optimizer.restore(checkpoint.adam_steps, checkpoint.adam_first, checkpoint.adam_second);
  Rng rng;
  rng.restore_state(checkpoint.rng_state);
  trainer.restore(checkpoint.params, std::move(optimizer), std::move(rng), checkpoint.step);
  return trainer;
}

}  // namespace echodnd
