// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include "echodnd/model.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "echodnd/errors.hpp"

namespace echodnd {

// ---------------------------------------------------------------------------
// ModelParams

std::size_t ModelParams::add_segment(std::string name, std::size_t length) {
  if (find(name)) throw ContractViolation("duplicate parameter segment " + name);
  segments_.push_back(Segment{std::move(name), values_.size(), length});
  values_.resize(values_.size() + length, 0.0);
  grads_.resize(values_.size(), 0.0);
  return segments_.size() - 1;
}

ad::ParamRef ModelParams::ref(std::size_t segment) {
  const Segment& s = segments_.at(segment);
  return ad::ParamRef{values_.data() + s.offset, grads_.data() + s.offset, s.length};
}

std::span<double> ModelParams::segment_values(std::size_t segment) {
  const Segment& s = segments_.at(segment);
  return std::span<double>(values_).subspan(s.offset, s.length);
}

std::span<const double> ModelParams::segment_values(std::size_t segment) const {
  const Segment& s = segments_.at(segment);
  return std::span<const double>(values_).subspan(s.offset, s.length);
}

std::span<double> ModelParams::segment_grads(std::size_t segment) {
  const Segment& s = segments_.at(segment);
  return std::span<double>(grads_).subspan(s.offset, s.length);
}

std::optional<std::size_t> ModelParams::find(std::string_view name) const {
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    if (segments_[i].name == name) return i;
  }
  return std::nullopt;
}

void ModelParams::zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

bool ModelParams::segments_tile() const {
  std::size_t cursor = 0;
  for (const Segment& s : segments_) {
    if (s.offset != cursor) return false;
    cursor += s.length;
  }
  return cursor == values_.size() && grads_.size() == values_.size();
}

bool operator==(const ModelParams::Segment& a, const ModelParams::Segment& b) {
  return a.name == b.name && a.offset == b.offset && a.length == b.length;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  return a.segments_ == b.segments_ && a.values_ == b.values_;
}

// ---------------------------------------------------------------------------
// Time embedding

std::vector<double> time_embedding(int t, int dim, int steps) {
  if (dim <= 0 || dim % 2 != 0) {
    throw ConfigError("time embedding dimension must be even and positive, got " +
                      std::to_string(dim));
  }
  if (t < 0 || t > steps) {
    throw ContractViolation("time embedding: t=" + std::to_string(t) + " outside 0.." +
                            std::to_string(steps));
  }
  std::vector<double> out(static_cast<std::size_t>(dim));
  const int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    const double period = std::pow(10000.0, static_cast<double>(k) / half);
    out[2 * k] = std::sin(t / period);
    out[2 * k + 1] = std::cos(t / period);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Network

class EchoDndNet::Binder {
 public:
  Binder(const ModelParams& params, ModelParams* mutable_params)
      : params_(params), mutable_(mutable_params) {}

  ad::ParamRef operator()(const std::string& name) const {
    const auto index = params_.find(name);
    if (!index) throw ContractViolation("parameter layout has no segment " + name);
    const auto& s = params_.segments()[*index];
    double* grad = mutable_ != nullptr ? mutable_->grads().data() + s.offset : nullptr;
    return ad::ParamRef{params_.values().data() + s.offset, grad, s.length};
  }

 private:
  const ModelParams& params_;
  ModelParams* mutable_;
};

namespace {

enum class Init { fan_in, zero };

std::string join(std::string_view prefix, const std::string& name) {
  return std::string(prefix) + name;
}

}  // namespace

EchoDndNet::EchoDndNet(ModelConfig config, int steps) : config_(config), steps_(steps) {
  if (config_.base_channels < 1 || config_.cond_channels < 1 || config_.scales < 1 ||
      config_.fusion_stages < 0 || config_.time_dim < 2 || config_.time_dim % 2 != 0) {
    throw ConfigError("invalid model configuration");
  }
  if (steps_ < 1) throw ConfigError("model needs T >= 1");
}

int EchoDndNet::level_channels(int level) const {
  return level == 0 ? config_.base_channels : 2 * config_.base_channels;
}

template <typename Visit>
void EchoDndNet::visit_layout(Visit&& visit) const {
  const int cc = config_.cond_channels;
  const int scales = config_.scales;
  auto conv = [&](const std::string& name, int cin, int cout, int k, bool bias, Init init) {
    visit(name + ".w", static_cast<std::size_t>(cout) * cin * k * k, init, cin * k * k);
    if (bias) visit(name + ".b", static_cast<std::size_t>(cout), Init::zero, 1);
  };

  conv("mfcm.stem", 1, cc, 3, true, Init::fan_in);
  for (int l = 1; l < scales; ++l) conv("mfcm.down" + std::to_string(l), cc, cc, 3, true, Init::fan_in);
  for (int s = 0; s < config_.fusion_stages; ++s) {
    const std::string stage = "mfcm.stage" + std::to_string(s);
    for (int i = 0; i < scales; ++i) conv(stage + ".block" + std::to_string(i), cc, cc, 3, true, Init::fan_in);
    if (!config_.fusion) continue;
    for (int i = 0; i < scales; ++i) {
      for (int j = 0; j < scales; ++j) {
        if (i != j) conv(stage + ".mix" + std::to_string(j) + "to" + std::to_string(i), cc, cc, 1, false, Init::fan_in);
      }
    }
  }
  conv("mfcm.scc", cc, 1, 1, true, Init::fan_in);

  const int td = config_.time_dim;
  for (const char* prefix : {"gnem.", "bnem."}) {
    const std::string p = prefix;
    visit(p + "time.w", static_cast<std::size_t>(td) * td, Init::fan_in, td);
    visit(p + "time.b", static_cast<std::size_t>(td), Init::zero, 1);
    for (int l = 0; l < scales; ++l) {
      const std::string enc = p + "enc" + std::to_string(l);
      const int cin = l == 0 ? 1 + cc : level_channels(l - 1);
      conv(enc, cin, level_channels(l), 3, true, Init::fan_in);
      visit(enc + ".temb.w", static_cast<std::size_t>(level_channels(l)) * td, Init::fan_in, td);
      visit(enc + ".temb.b", static_cast<std::size_t>(level_channels(l)), Init::zero, 1);
      conv(enc + ".gate", cc, level_channels(l), 1, true, Init::fan_in);
    }
    const int bottom = level_channels(scales - 1);
    const int kv_in = config_.cross_attention ? cc : bottom;
    conv(p + "attn.q", bottom, bottom, 1, false, Init::fan_in);
    conv(p + "attn.k", kv_in, bottom, 1, false, Init::fan_in);
    conv(p + "attn.v", kv_in, bottom, 1, false, Init::fan_in);
    conv(p + "attn.o", bottom, bottom, 1, false, Init::fan_in);
    for (int l = scales - 2; l >= 0; --l) {
      const std::string dec = p + "dec" + std::to_string(l);
      conv(dec, level_channels(l + 1) + level_channels(l), level_channels(l), 3, true, Init::fan_in);
      visit(dec + ".temb.w", static_cast<std::size_t>(level_channels(l)) * td, Init::fan_in, td);
      visit(dec + ".temb.b", static_cast<std::size_t>(level_channels(l)), Init::zero, 1);
    }
    conv(p + "head", level_channels(0), 1, 1, true, Init::zero);
  }
}

ModelParams EchoDndNet::make_params() const {
  ModelParams params;
  visit_layout([&](const std::string& name, std::size_t length, Init, int) {
    params.add_segment(name, length);
  });
  return params;
}

void EchoDndNet::initialize(ModelParams& params, Rng& rng) const {
  visit_layout([&](const std::string& name, std::size_t, Init init, int fan_in) {
    const auto index = params.find(name);
    if (!index) throw ContractViolation("parameter layout has no segment " + name);
    auto values = params.segment_values(*index);
    if (init == Init::zero) {
      std::fill(values.begin(), values.end(), 0.0);
      return;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : values) v = bound * (2.0 * rng.uniform() - 1.0);
  });
}

void EchoDndNet::check_input(int height, int width) const {
  const int factor = 1 << (config_.scales - 1);
  if (height % factor != 0 || width % factor != 0) {
    throw ContractViolation("input " + std::to_string(height) + "x" + std::to_string(width) +
                            " not divisible by " + std::to_string(factor) + " for " +
                            std::to_string(config_.scales) + " scales");
  }
}

EchoDndNet::CondIds EchoDndNet::build_conditioner(ad::Tape& tape, ad::Tape::Id image,
                                                  const Binder& p) const {
  const int cc = config_.cond_channels;
  const int scales = config_.scales;
  std::vector<ad::Tape::Id> streams;
  streams.push_back(tape.silu(tape.conv2d(image, p("mfcm.stem.w"), p("mfcm.stem.b"), cc, 3)));
  for (int l = 1; l < scales; ++l) {
    const std::string name = "mfcm.down" + std::to_string(l);
    streams.push_back(tape.silu(tape.conv2d(tape.avg_pool2(streams.back()), p(name + ".w"), p(name + ".b"), cc, 3)));
  }
  for (int s = 0; s < config_.fusion_stages; ++s) {
    const std::string stage = "mfcm.stage" + std::to_string(s);
    std::vector<ad::Tape::Id> blocks;
    for (int i = 0; i < scales; ++i) {
      const std::string name = stage + ".block" + std::to_string(i);
      blocks.push_back(tape.silu(tape.conv2d(streams[i], p(name + ".w"), p(name + ".b"), cc, 3)));
    }
    if (!config_.fusion) {
      streams = blocks;
      continue;
    }
    for (int i = 0; i < scales; ++i) {
      ad::Tape::Id acc = blocks[i];
      for (int j = 0; j < scales; ++j) {
        if (j == i) continue;
        const auto mix = p(stage + ".mix" + std::to_string(j) + "to" + std::to_string(i) + ".w");
        ad::Tape::Id contribution;
        if (j < i) {
          // Finer to coarser: pool first, pooling and 1×1 mixing commute.
          ad::Tape::Id pooled = blocks[j];
          for (int k = j; k < i; ++k) pooled = tape.avg_pool2(pooled);
          contribution = tape.conv2d(pooled, mix, {}, cc, 1);
        } else {
          contribution = tape.conv2d(blocks[j], mix, {}, cc, 1);
          for (int k = i; k < j; ++k) contribution = tape.upsample2(contribution);
        }
        acc = tape.add(acc, contribution);
      }
      streams[i] = tape.silu(acc);
    }
  }
  CondIds ids;
  ids.scales = streams;
  ids.scc_logit = tape.conv2d(streams[0], p("mfcm.scc.w"), p("mfcm.scc.b"), 1, 1);
  return ids;
}

ad::Tape::Id EchoDndNet::build_twin(ad::Tape& tape, std::string_view prefix, ad::Tape::Id noisy,
                                    const std::vector<ad::Tape::Id>& cond, int t,
                                    const Binder& p) const {
  const int scales = config_.scales;
  const int td = config_.time_dim;
  auto name = [&](const std::string& suffix) { return join(prefix, suffix); };

  std::vector<double> emb = time_embedding(t, td, steps_);
  ad::Tensor emb_tensor(td, 1, 1);
  emb_tensor.data = std::move(emb);
  const auto temb_in = tape.input(std::move(emb_tensor));
  const auto temb = tape.silu(tape.linear(temb_in, p(name("time.w")), p(name("time.b")), td));

  auto block = [&](ad::Tape::Id x, const std::string& layer, int cout) {
    const auto h = tape.conv2d(x, p(name(layer + ".w")), p(name(layer + ".b")), cout, 3);
    const auto tb = tape.linear(temb, p(name(layer + ".temb.w")), p(name(layer + ".temb.b")), cout);
    return tape.silu(tape.add_channel_bias(h, tb));
  };
  auto gate = [&](ad::Tape::Id h, int level, int cout) {
    const std::string layer = "enc" + std::to_string(level) + ".gate";
    const auto g = tape.conv2d(cond[level], p(name(layer + ".w")), p(name(layer + ".b")), cout, 1);
    return tape.mul(h, tape.scale(tape.sigmoid(g), 2.0));
  };

  std::vector<ad::Tape::Id> skips;
  ad::Tape::Id h = tape.concat(noisy, cond[0]);
  for (int l = 0; l < scales; ++l) {
    if (l > 0) h = tape.avg_pool2(h);
    h = block(h, "enc" + std::to_string(l), level_channels(l));
    h = gate(h, l, level_channels(l));
    skips.push_back(h);
  }

  const int bottom = level_channels(scales - 1);
  const auto kv_src = config_.cross_attention ? cond[scales - 1] : h;
  const auto q = tape.conv2d(h, p(name("attn.q.w")), {}, bottom, 1);
  const auto k = tape.conv2d(kv_src, p(name("attn.k.w")), {}, bottom, 1);
  const auto v = tape.conv2d(kv_src, p(name("attn.v.w")), {}, bottom, 1);
  const auto attended = tape.attention(q, k, v);
  h = tape.add(h, tape.conv2d(attended, p(name("attn.o.w")), {}, bottom, 1));

  for (int l = scales - 2; l >= 0; --l) {
    h = tape.concat(tape.upsample2(h), skips[l]);
    h = block(h, "dec" + std::to_string(l), level_channels(l));
  }
  return tape.conv2d(h, p(name("head.w")), p(name("head.b")), 1, 1);
}

Lattice lattice_from_tensor(const ad::Tensor& tensor) {
  if (tensor.channels != 1) throw ContractViolation("expected a single-channel tensor");
  Lattice out(tensor.height, tensor.width);
  std::copy(tensor.data.begin(), tensor.data.end(), out.values().begin());
  return out;
}

ad::Tensor tensor_from_lattice(const Lattice& lattice) {
  ad::Tensor out(1, lattice.height(), lattice.width());
  std::copy(lattice.values().begin(), lattice.values().end(), out.data.begin());
  return out;
}

ConditioningFeatures EchoDndNet::mfcm_forward(const Lattice& image, const ModelParams& params) const {
  check_input(image.height(), image.width());
  ad::Tape tape;
  const Binder p(params, nullptr);
  const CondIds ids = build_conditioner(tape, tape.input(tensor_from_lattice(image)), p);
  ConditioningFeatures out;
  for (auto id : ids.scales) out.scales.push_back(tape.value(id));
  out.scc_out = lattice_from_tensor(tape.value(tape.sigmoid(ids.scc_logit)));
  return out;
}

namespace {

void check_cond(const ConditioningFeatures& cond, int scales, int cond_channels, int height, int width) {
  if (static_cast<int>(cond.scales.size()) != scales) {
    throw ContractViolation("conditioning features have the wrong number of scales");
  }
  for (int l = 0; l < scales; ++l) {
    const auto& s = cond.scales[l];
    if (s.channels != cond_channels || s.height != (height >> l) || s.width != (width >> l)) {
      throw ContractViolation("conditioning scale " + std::to_string(l) +
                              " does not match the noisy input resolution");
    }
  }
}

}  // namespace

DenoiserOutput EchoDndNet::denoise(const Lattice* x_t_gaussian, const Lattice* x_t_bernoulli,
                                   const ConditioningFeatures& cond, int t,
                                   const ModelParams& params) const {
  const Lattice* shape = x_t_gaussian != nullptr ? x_t_gaussian : x_t_bernoulli;
  if (shape == nullptr) throw ContractViolation("denoise: no branch input given");
  if (x_t_gaussian != nullptr && x_t_bernoulli != nullptr) {
    require_same_shape(*x_t_gaussian, *x_t_bernoulli, "denoise");
  }
  check_input(shape->height(), shape->width());
  check_cond(cond, config_.scales, config_.cond_channels, shape->height(), shape->width());

  const Binder p(params, nullptr);
  DenoiserOutput out;
  auto run = [&](const Lattice& noisy, std::string_view prefix) {
    ad::Tape tape;
    std::vector<ad::Tape::Id> cond_ids;
    for (const auto& s : cond.scales) cond_ids.push_back(tape.input(s));
    const auto head = build_twin(tape, prefix, tape.input(tensor_from_lattice(noisy)), cond_ids, t, p);
    return std::pair<ad::Tape, ad::Tape::Id>(std::move(tape), head);
  };
  if (x_t_gaussian != nullptr) {
    auto [tape, head] = run(*x_t_gaussian, "gnem.");
    out.eps_hat = lattice_from_tensor(tape.value(head));
  }
  if (x_t_bernoulli != nullptr) {
    auto [tape, head] = run(*x_t_bernoulli, "bnem.");
    out.x0_prob_hat = lattice_from_tensor(tape.value(tape.sigmoid(head)));
  }
  return out;
}

void EchoDndNet::forward_recorded(const Lattice& image, const Lattice* x_t_gaussian,
                                  const Lattice* x_t_bernoulli, int t, ModelParams& params,
                                  ForwardRecord& record) const {
  check_input(image.height(), image.width());
  if (x_t_gaussian != nullptr) require_same_shape(image, *x_t_gaussian, "forward_recorded");
  if (x_t_bernoulli != nullptr) require_same_shape(image, *x_t_bernoulli, "forward_recorded");

  record = ForwardRecord{};
  ad::Tape& tape = record.tape;
  record.bound = &params;
  const Binder p(params, &params);
  const CondIds cond = build_conditioner(tape, tape.input(tensor_from_lattice(image)), p);
  record.scc_logit = cond.scc_logit;
  record.scc = tape.sigmoid(cond.scc_logit);
  for (auto id : cond.scales) record.cond.scales.push_back(tape.value(id));
  record.cond.scc_out = lattice_from_tensor(tape.value(record.scc));

  if (x_t_gaussian != nullptr) {
    record.eps = build_twin(tape, "gnem.", tape.input(tensor_from_lattice(*x_t_gaussian)), cond.scales, t, p);
    record.output.eps_hat = lattice_from_tensor(tape.value(record.eps));
  }
  if (x_t_bernoulli != nullptr) {
    const auto head = build_twin(tape, "bnem.", tape.input(tensor_from_lattice(*x_t_bernoulli)), cond.scales, t, p);
    record.x0_prob = tape.sigmoid(head);
    record.output.x0_prob_hat = lattice_from_tensor(tape.value(record.x0_prob));
  }
  record.has_forward = true;
}

void EchoDndNet::backward(ForwardRecord& record, const OutputAdjoints& adjoints,
                          ModelParams& params) const {
  if (!record.has_forward) throw ContractViolation("backward called without a recorded forward pass");
  if (record.bound != &params) throw ContractViolation("backward: parameters differ from the recorded forward pass");
  ad::Tape& tape = record.tape;
  auto seed = [&](ad::Tape::Id id, const Lattice& adjoint) {
    if (adjoint.empty()) return;
    if (id < 0) throw ContractViolation("adjoint given for a branch that was not run");
    ad::Tensor& g = tape.grad(id);
    if (g.size() != adjoint.size()) throw ContractViolation("adjoint shape mismatch");
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += adjoint[i];
  };
  seed(record.eps, adjoints.eps_hat);
  seed(record.x0_prob, adjoints.x0_prob_hat);
  seed(record.scc, adjoints.scc_out);
  tape.backward();
  record.has_forward = false;
  record.bound = nullptr;
  tape.clear();
}

std::vector<std::size_t> EchoDndNet::segments_with_prefix(const ModelParams& params,
                                                          std::string_view prefix) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < params.segments().size(); ++i) {
    if (params.segments()[i].name.starts_with(prefix)) out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Denoisers

ConditioningFeatures NetworkDenoiser::condition(const Lattice& image) const {
  return net_.mfcm_forward(image, params_);
}

DenoiserOutput NetworkDenoiser::predict(const Lattice* x_t_gaussian, const Lattice* x_t_bernoulli,
                                        const ConditioningFeatures& cond, int t) const {
  return net_.denoise(x_t_gaussian, x_t_bernoulli, cond, t, params_);
}

OracleDenoiser::OracleDenoiser(Lattice x0, const NoiseSchedule& gaussian_schedule)
    : x0_(std::move(x0)), schedule_(gaussian_schedule) {
  require_binary(x0_, "OracleDenoiser");
}

ConditioningFeatures OracleDenoiser::condition(const Lattice& image) const {
  require_same_shape(image, x0_, "OracleDenoiser::condition");
  ConditioningFeatures out;
  out.scc_out = x0_;
  return out;
}

DenoiserOutput OracleDenoiser::predict(const Lattice* x_t_gaussian, const Lattice* x_t_bernoulli,
                                       const ConditioningFeatures&, int t) const {
  DenoiserOutput out;
  if (x_t_gaussian != nullptr) {
    require_same_shape(*x_t_gaussian, x0_, "OracleDenoiser::predict");
    const double ab = schedule_.alpha_bar(t);
    const double signal = std::sqrt(ab);
    const double noise = std::sqrt(1.0 - ab);
    out.eps_hat = Lattice(x0_.height(), x0_.width());
    for (std::size_t i = 0; i < x0_.size(); ++i) {
      out.eps_hat[i] = ((*x_t_gaussian)[i] - signal * x0_[i]) / noise;
    }
  }
  if (x_t_bernoulli != nullptr) out.x0_prob_hat = x0_;
  return out;
}

}  // namespace echodnd
