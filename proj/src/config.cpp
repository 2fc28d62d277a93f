// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include "echodnd/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "echodnd/errors.hpp"

namespace echodnd {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view expected) {
  throw ConfigError("key '" + std::string(key) + "': expected " + std::string(expected) + ", got '" +
                    std::string(value) + "'");
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view value) {
  Int out{};
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value, "an integer");
  return out;
}

double parse_real(std::string_view key, std::string_view value) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true") return true;
  if (value == "false") return false;
  bad_value(key, value, "true or false");
}

struct Field {
  std::string key;
  std::function<void(TrainingConfig&, std::string_view)> set;
  std::function<std::string(const TrainingConfig&)> get;
};

template <typename Member>
Field real_field(std::string key, Member member) {
  return {key,
          [key, member](TrainingConfig& c, std::string_view v) { std::invoke(member, c) = parse_real(key, v); },
          [member](const TrainingConfig& c) { return format_double(std::invoke(member, c)); }};
}

template <typename Int, typename Member>
Field int_field(std::string key, Member member) {
  return {key,
          [key, member](TrainingConfig& c, std::string_view v) { std::invoke(member, c) = parse_int<Int>(key, v); },
          [member](const TrainingConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

template <typename Member>
Field bool_field(std::string key, Member member) {
  return {key,
          [key, member](TrainingConfig& c, std::string_view v) { std::invoke(member, c) = parse_bool(key, v); },
          [member](const TrainingConfig& c) { return std::string(std::invoke(member, c) ? "true" : "false"); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(real_field("lambda_gaussian", [](auto& c) -> auto& { return c.lambdas.gaussian; }));
    f.push_back(real_field("lambda_bernoulli", [](auto& c) -> auto& { return c.lambdas.bernoulli; }));
    f.push_back(real_field("lambda_kl_gaussian", [](auto& c) -> auto& { return c.lambdas.kl_gaussian; }));
    f.push_back(real_field("lambda_kl_bernoulli", [](auto& c) -> auto& { return c.lambdas.kl_bernoulli; }));
    f.push_back(real_field("lambda_scc", [](auto& c) -> auto& { return c.lambdas.scc; }));
    f.push_back(int_field<int>("diffusion_steps", [](auto& c) -> auto& { return c.diffusion_steps; }));
    f.push_back(real_field("beta_min", [](auto& c) -> auto& { return c.beta_min; }));
    f.push_back(real_field("beta_max", [](auto& c) -> auto& { return c.beta_max; }));
    f.push_back(bool_field("shared_schedule", [](auto& c) -> auto& { return c.shared_schedule; }));
    f.push_back(real_field("bernoulli_beta_min", [](auto& c) -> auto& { return c.bernoulli_beta_min; }));
    f.push_back(real_field("bernoulli_beta_max", [](auto& c) -> auto& { return c.bernoulli_beta_max; }));
    f.push_back(int_field<int>("train_steps", [](auto& c) -> auto& { return c.train_steps; }));
    f.push_back(int_field<int>("batch_size", [](auto& c) -> auto& { return c.batch_size; }));
    f.push_back(real_field("learning_rate", [](auto& c) -> auto& { return c.learning_rate; }));
    f.push_back(real_field("weight_decay", [](auto& c) -> auto& { return c.weight_decay; }));
    f.push_back(real_field("adam_beta1", [](auto& c) -> auto& { return c.adam_beta1; }));
    f.push_back(real_field("adam_beta2", [](auto& c) -> auto& { return c.adam_beta2; }));
    f.push_back(real_field("adam_epsilon", [](auto& c) -> auto& { return c.adam_epsilon; }));
    f.push_back(int_field<std::uint64_t>("seed", [](auto& c) -> auto& { return c.seed; }));
    f.push_back({"noise", [](TrainingConfig& c, std::string_view v) { c.noise = parse_noise_mode(v); },
                 [](const TrainingConfig& c) { return to_string(c.noise); }});
    f.push_back({"loss", [](TrainingConfig& c, std::string_view v) { c.loss = parse_loss_mode(v); },
                 [](const TrainingConfig& c) { return to_string(c.loss); }});
    f.push_back({"sampler", [](TrainingConfig& c, std::string_view v) { c.sampler = parse_sampler(v); },
                 [](const TrainingConfig& c) { return to_string(c.sampler); }});
    f.push_back(int_field<int>("stride", [](auto& c) -> auto& { return c.stride; }));
    f.push_back(int_field<int>("ensemble", [](auto& c) -> auto& { return c.ensemble; }));
    f.push_back(bool_field("hflip", [](auto& c) -> auto& { return c.hflip; }));
    f.push_back(int_field<int>("base_channels", [](auto& c) -> auto& { return c.model.base_channels; }));
    f.push_back(int_field<int>("cond_channels", [](auto& c) -> auto& { return c.model.cond_channels; }));
    f.push_back(int_field<int>("scales", [](auto& c) -> auto& { return c.model.scales; }));
    f.push_back(int_field<int>("fusion_stages", [](auto& c) -> auto& { return c.model.fusion_stages; }));
    f.push_back(int_field<int>("time_dim", [](auto& c) -> auto& { return c.model.time_dim; }));
    f.push_back({"conditioner",
                 [](TrainingConfig& c, std::string_view v) {
                   if (v == "mfcm") {
                     c.model.fusion = true;
                   } else if (v == "plain") {
                     c.model.fusion = false;
                   } else {
                     bad_value("conditioner", v, "plain or mfcm");
                   }
                 },
                 [](const TrainingConfig& c) { return std::string(c.model.fusion ? "mfcm" : "plain"); }});
    f.push_back(bool_field("cross_attention", [](auto& c) -> auto& { return c.model.cross_attention; }));
    f.push_back(int_field<int>("log_every", [](auto& c) -> auto& { return c.log_every; }));
    f.push_back(int_field<int>("checkpoint_every", [](auto& c) -> auto& { return c.checkpoint_every; }));
    return f;
  }();
  return table;
}

}  // namespace

std::string to_string(NoiseMode mode) {
  switch (mode) {
    case NoiseMode::gaussian: return "gaussian";
    case NoiseMode::bernoulli: return "bernoulli";
    case NoiseMode::both: return "both";
  }
  return "both";
}

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::base: return "base";
    case LossMode::kl: return "kl";
    case LossMode::full: return "full";
  }
  return "full";
}

std::string to_string(SamplerKind kind) { return kind == SamplerKind::ddpm ? "ddpm" : "ddim"; }

NoiseMode parse_noise_mode(std::string_view text) {
  if (text == "gaussian") return NoiseMode::gaussian;
  if (text == "bernoulli") return NoiseMode::bernoulli;
  if (text == "both") return NoiseMode::both;
  bad_value("noise", text, "gaussian, bernoulli or both");
}

LossMode parse_loss_mode(std::string_view text) {
  if (text == "base") return LossMode::base;
  if (text == "kl") return LossMode::kl;
  if (text == "full") return LossMode::full;
  bad_value("loss", text, "base, kl or full");
}

SamplerKind parse_sampler(std::string_view text) {
  if (text == "ddim") return SamplerKind::ddim;
  if (text == "ddpm") return SamplerKind::ddpm;
  bad_value("sampler", text, "ddim or ddpm");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

void apply_setting(TrainingConfig& config, std::string_view key, std::string_view value) {
  for (const Field& f : fields()) {
    if (f.key == key) {
      f.set(config, trim(value));
      return;
    }
  }
  throw ConfigError("unknown key '" + std::string(key) + "'");
}

TrainingConfig parse_config(std::string_view text, std::string_view source) {
  TrainingConfig config;
  std::set<std::string, std::less<>> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const std::string where = std::string(source) + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key=value, got '" + std::string(line) + "'");
    const std::string_view key = trim(line.substr(0, eq));
    if (!seen.insert(std::string(key)).second) {
      throw ConfigError(where + "key '" + std::string(key) + "' given twice");
    }
    try {
      apply_setting(config, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(source) + ": " + e.what());
  }
  return config;
}

TrainingConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path);
}

std::string format_config(const TrainingConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += f.key + "=" + f.get(config) + "\n";
  return out;
}

std::string format_double(double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  (void)ec;
  return std::string(buffer, ptr);
}

}  // namespace echodnd
