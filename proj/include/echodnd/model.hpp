// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "echodnd/autodiff.hpp"
#include "echodnd/lattice.hpp"
#include "echodnd/rng.hpp"
#include "echodnd/schedule.hpp"

namespace echodnd {

enum class NoiseMode { gaussian, bernoulli, both };

inline bool uses_gaussian(NoiseMode m) { return m != NoiseMode::bernoulli; }
inline bool uses_bernoulli(NoiseMode m) { return m != NoiseMode::gaussian; }

/// Flat parameter vector with a named-segment index. Gradients share the
/// layout.
class ModelParams {
 public:
  struct Segment {
    std::string name;
    std::size_t offset = 0;
    std::size_t length = 0;
  };

  /// Appends a segment and returns its index. Names must be unique.
  std::size_t add_segment(std::string name, std::size_t length);

  ad::ParamRef ref(std::size_t segment);
  std::span<double> segment_values(std::size_t segment);
  std::span<const double> segment_values(std::size_t segment) const;
  std::span<double> segment_grads(std::size_t segment);
  std::optional<std::size_t> find(std::string_view name) const;

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> grads() { return grads_; }
  std::span<const double> grads() const { return grads_; }
  const std::vector<Segment>& segments() const { return segments_; }
  std::size_t size() const { return values_.size(); }

  void zero_grad();
  /// True when the segments are ordered, disjoint and tile [0, size()).
  bool segments_tile() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  std::vector<Segment> segments_;
  std::vector<double> values_;
  std::vector<double> grads_;
};

bool operator==(const ModelParams::Segment& a, const ModelParams::Segment& b);

struct ModelConfig {
  int base_channels = 8;
  int cond_channels = 8;
  int scales = 3;
  int fusion_stages = 2;
  int time_dim = 16;
  /// MFCM cross-resolution fusion; false gives the plain single-stream
  /// encoder conditioner.
  bool fusion = true;
  /// True cross-attention from the coarsest conditioning scale in place of
  /// self-attention at the denoiser bottleneck.
  bool cross_attention = false;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Sinusoidal timestep embedding, interleaved (sin, cos) pairs with
/// geometrically spaced periods 10000^(2k/dim). Throws ConfigError for odd or
/// non-positive dim and ContractViolation for t outside 0..T.
std::vector<double> time_embedding(int t, int dim, int steps);

/// Multi-scale conditioning features computed once per image.
struct ConditioningFeatures {
  /// scales[i] is (C_i, H/2^i, W/2^i).
  std::vector<ad::Tensor> scales;
  /// Full-resolution one-channel projection squashed to [0,1].
  Lattice scc_out;
};

struct DenoiserOutput {
  /// Gaussian-branch noise estimate; empty when that branch was not run.
  Lattice eps_hat;
  /// Bernoulli-branch x̂₀ probability; empty when that branch was not run.
  Lattice x0_prob_hat;
};

/// Everything a recorded forward pass needs for backward().
struct ForwardRecord {
  ad::Tape tape;
  ad::Tape::Id scc_logit = -1;
  ad::Tape::Id scc = -1;
  ad::Tape::Id eps = -1;
  ad::Tape::Id x0_prob = -1;
  ConditioningFeatures cond;
  DenoiserOutput output;
  bool has_forward = false;
  ModelParams* bound = nullptr;
};

/// Adjoints of the loss with respect to the network outputs. Empty lattices
/// contribute nothing.
struct OutputAdjoints {
  Lattice eps_hat;
  Lattice x0_prob_hat;
  Lattice scc_out;
};

/// MFCM conditioner plus twin GNEM/BNEM encoder-decoders. Stateless apart from
/// its configuration; parameters live in ModelParams.
class EchoDndNet {
 public:
  EchoDndNet(ModelConfig config, int steps);

  const ModelConfig& config() const { return config_; }
  int steps() const { return steps_; }

  /// Zero-valued parameter vector with this architecture's segment layout.
  ModelParams make_params() const;
  /// Fan-in uniform weights, zero biases, zero output heads.
  void initialize(ModelParams& params, Rng& rng) const;

  /// Throws ContractViolation when H or W is not divisible by 2^(scales−1).
  void check_input(int height, int width) const;

  ConditioningFeatures mfcm_forward(const Lattice& image, const ModelParams& params) const;

  DenoiserOutput denoise(const Lattice* x_t_gaussian, const Lattice* x_t_bernoulli,
                         const ConditioningFeatures& cond, int t,
                         const ModelParams& params) const;

  /// Conditioner and denoisers on one tape, for training. A null branch input
  /// skips that branch.
  void forward_recorded(const Lattice& image, const Lattice* x_t_gaussian,
                        const Lattice* x_t_bernoulli, int t, ModelParams& params,
                        ForwardRecord& record) const;

  /// Accumulates dLoss/dθ into params.grads(). Throws ContractViolation if
  /// record holds no forward pass; consumes the record.
  void backward(ForwardRecord& record, const OutputAdjoints& adjoints, ModelParams& params) const;

  /// Segment indices the named branch owns ("mfcm.", "gnem.", "bnem.").
  std::vector<std::size_t> segments_with_prefix(const ModelParams& params,
                                                std::string_view prefix) const;

 private:
  struct CondIds {
    std::vector<ad::Tape::Id> scales;
    ad::Tape::Id scc_logit = -1;
  };

  class Binder;

  CondIds build_conditioner(ad::Tape& tape, ad::Tape::Id image, const Binder& p) const;
  ad::Tape::Id build_twin(ad::Tape& tape, std::string_view prefix, ad::Tape::Id noisy,
                          const std::vector<ad::Tape::Id>& cond, int t, const Binder& p) const;
  template <typename Visit>
  void visit_layout(Visit&& visit) const;
  int level_channels(int level) const;

  ModelConfig config_;
  int steps_;
};

/// What the sampling pipeline needs from a denoiser. The network is one
/// implementation; tests and the evaluation harness plug in oracles.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual ConditioningFeatures condition(const Lattice& image) const = 0;
  virtual DenoiserOutput predict(const Lattice* x_t_gaussian, const Lattice* x_t_bernoulli,
                                 const ConditioningFeatures& cond, int t) const = 0;
};

class NetworkDenoiser final : public Denoiser {
 public:
  NetworkDenoiser(const EchoDndNet& net, const ModelParams& params) : net_(net), params_(params) {}
  ConditioningFeatures condition(const Lattice& image) const override;
  DenoiserOutput predict(const Lattice* x_t_gaussian, const Lattice* x_t_bernoulli,
                         const ConditioningFeatures& cond, int t) const override;

 private:
  const EchoDndNet& net_;
  const ModelParams& params_;
};

/// Knows the true mask: returns the exact ε implied by x_t and x̂₀ = x0.
class OracleDenoiser final : public Denoiser {
 public:
  OracleDenoiser(Lattice x0, const NoiseSchedule& gaussian_schedule);
  ConditioningFeatures condition(const Lattice& image) const override;
  DenoiserOutput predict(const Lattice* x_t_gaussian, const Lattice* x_t_bernoulli,
                         const ConditioningFeatures& cond, int t) const override;

 private:
  Lattice x0_;
  NoiseSchedule schedule_;
};

Lattice lattice_from_tensor(const ad::Tensor& tensor);
ad::Tensor tensor_from_lattice(const Lattice& lattice);

}  // namespace echodnd
