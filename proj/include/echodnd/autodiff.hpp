// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace echodnd::ad {

/// Channels × height × width feature map, row-major per channel plane.
struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w),
        data(static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
                 static_cast<std::size_t>(w),
             fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  std::size_t size() const { return data.size(); }
  double* channel(int c) { return data.data() + static_cast<std::size_t>(c) * plane(); }
  const double* channel(int c) const { return data.data() + static_cast<std::size_t>(c) * plane(); }
  bool same_shape(const Tensor& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }
};

/// View of one parameter segment and its gradient accumulator.
struct ParamRef {
  const double* value = nullptr;
  double* grad = nullptr;
  std::size_t size = 0;
};

/// Reverse-mode tape over Tensor-valued nodes. Each op appends a node holding
/// its forward value; backward() walks the nodes in reverse and accumulates
/// adjoints into inputs and into ParamRef gradients.
class Tape {
 public:
  using Id = int;

  /// Leaf node. Convolutions skip the input adjoint of leaves that do not
  /// require a gradient.
  Id input(Tensor value, bool requires_grad = false);

  const Tensor& value(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  /// Adjoint buffer, allocated zero-filled on first access.
  Tensor& grad(Id id);
  std::size_t size() const { return nodes_.size(); }

  /// k×k convolution, stride 1, zero "same" padding. Weight layout
  /// [out][in][ky][kx]; bias may be empty.
  Id conv2d(Id x, ParamRef weight, ParamRef bias, int out_channels, int kernel);
  /// Dense layer on a (n,1,1) vector. Weight layout [out][in].
  Id linear(Id x, ParamRef weight, ParamRef bias, int out_features);
  Id add(Id a, Id b);
  /// x + v with v of shape (C,1,1) broadcast over the plane.
  Id add_channel_bias(Id x, Id v);
  Id mul(Id a, Id b);
  Id scale(Id x, double factor);
  Id silu(Id x);
  Id sigmoid(Id x);
  /// 2×2 average pooling, stride 2.
  Id avg_pool2(Id x);
  /// ×2 bilinear upsampling with half-pixel centers and edge clamping.
  Id upsample2(Id x);
  Id concat(Id a, Id b);
  /// Single-head scaled dot-product attention. Queries come from q's pixels,
  /// keys and values from k's and v's pixels; output takes q's spatial shape
  /// and v's channel count.
  Id attention(Id q, Id k, Id v);

  /// Seeds nothing; callers write adjoints with grad(id) first.
  void backward();
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<double> saved;
    std::function<void()> back;
    bool requires_grad = true;
  };

  Id push(Tensor value, bool requires_grad = true);
  Node& node(Id id) { return nodes_[static_cast<std::size_t>(id)]; }

  std::vector<Node> nodes_;
};

}  // namespace echodnd::ad
