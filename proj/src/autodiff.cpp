// Copyright 2026 The echodnd Authors
// SPDX-License-Identifier: Apache-2.0

#include "echodnd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "echodnd/errors.hpp"
#include "echodnd/kernels.hpp"

namespace echodnd::ad {
namespace {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require(bool ok, const char* what) {
  if (!ok) throw ContractViolation(std::string("tape: ") + what);
}

// Bilinear ×2 taps along one axis: output i reads src0/src1 with weights.
struct Taps {
  std::vector<int> src0, src1;
  std::vector<double> w0, w1;
};

Taps upsample_taps(int n) {
  Taps taps;
  const int out = 2 * n;
  taps.src0.resize(out);
  taps.src1.resize(out);
  taps.w0.resize(out);
  taps.w1.resize(out);
  for (int i = 0; i < out; ++i) {
    const double src = (i + 0.5) / 2.0 - 0.5;
    const int lo = static_cast<int>(std::floor(src));
    const double frac = src - lo;
    taps.src0[i] = std::clamp(lo, 0, n - 1);
    taps.src1[i] = std::clamp(lo + 1, 0, n - 1);
    taps.w0[i] = 1.0 - frac;
    taps.w1[i] = frac;
  }
  return taps;
}

}  // namespace

Tape::Id Tape::push(Tensor value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, requires_grad});
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::input(Tensor value, bool requires_grad) {
  return push(std::move(value), requires_grad);
}

Tensor& Tape::grad(Id id) {
  Node& n = node(id);
  if (n.grad.data.empty()) n.grad = Tensor(n.value.channels, n.value.height, n.value.width);
  return n.grad;
}

void Tape::backward() {
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.back && !n.grad.data.empty()) n.back();
  }
}

Tape::Id Tape::conv2d(Id x, ParamRef weight, ParamRef bias, int out_channels, int kernel) {
  const Tensor& in = value(x);
  require(kernel % 2 == 1, "conv kernel must be odd");
  const int cin = in.channels;
  const std::size_t taps = static_cast<std::size_t>(cin) * kernel * kernel;
  require(weight.size == taps * static_cast<std::size_t>(out_channels), "conv weight size");
  require(bias.size == 0 || bias.size == static_cast<std::size_t>(out_channels), "conv bias size");
  const int h = in.height;
  const int w = in.width;
  const std::size_t hw = in.plane();
  const int pad = kernel / 2;

  std::vector<double> cols;
  if (kernel > 1) {
    cols.assign(taps * hw, 0.0);
    for (int ci = 0; ci < cin; ++ci) {
      const double* src = in.channel(ci);
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          double* dst = cols.data() + ((static_cast<std::size_t>(ci) * kernel + ky) * kernel + kx) * hw;
          const int x_lo = std::max(0, pad - kx);
          const int x_hi = std::min(w, w + pad - kx);
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= h || x_hi <= x_lo) continue;
            std::copy(src + static_cast<std::size_t>(sy) * w + (x_lo + kx - pad),
                      src + static_cast<std::size_t>(sy) * w + (x_hi + kx - pad),
                      dst + static_cast<std::size_t>(y) * w + x_lo);
          }
        }
      }
    }
  }

  Tensor out(out_channels, h, w);
  const double* col_base = kernel > 1 ? cols.data() : in.data.data();
  for (int o = 0; o < out_channels; ++o) {
    double* dst = out.channel(o);
    if (bias.size != 0) std::fill(dst, dst + hw, bias.value[o]);
    const double* wrow = weight.value + static_cast<std::size_t>(o) * taps;
    for (std::size_t j = 0; j < taps; ++j) {
      if (wrow[j] != 0.0) kernels::axpy(wrow[j], col_base + j * hw, dst, hw);
    }
  }

  const Id id = push(std::move(out));
  node(id).saved = std::move(cols);
  node(id).back = [this, id, x, weight, bias, out_channels, kernel, taps, hw, h, w, pad, cin]() {
    Node& self = node(id);
    const Tensor& g = self.grad;
    const double* col_base = kernel > 1 ? self.saved.data() : value(x).data.data();
    for (int o = 0; o < out_channels; ++o) {
      const double* go = g.channel(o);
      double* gw = weight.grad + static_cast<std::size_t>(o) * taps;
      for (std::size_t j = 0; j < taps; ++j) gw[j] += kernels::dot(go, col_base + j * hw, hw);
      if (bias.size != 0) bias.grad[o] += kernels::sum(go, hw);
    }
    if (!node(x).requires_grad) return;
    Tensor& gx = grad(x);
    if (kernel == 1) {
      for (int o = 0; o < out_channels; ++o) {
        const double* wrow = weight.value + static_cast<std::size_t>(o) * taps;
        for (int ci = 0; ci < cin; ++ci) kernels::axpy(wrow[ci], g.channel(o), gx.channel(ci), hw);
      }
      return;
    }
    std::vector<double> dcols(taps * hw, 0.0);
    for (int o = 0; o < out_channels; ++o) {
      const double* wrow = weight.value + static_cast<std::size_t>(o) * taps;
      for (std::size_t j = 0; j < taps; ++j) {
        if (wrow[j] != 0.0) kernels::axpy(wrow[j], g.channel(o), dcols.data() + j * hw, hw);
      }
    }
    for (int ci = 0; ci < cin; ++ci) {
      double* dst = gx.channel(ci);
      for (int ky = 0; ky < kernel; ++ky) {
        for (int kx = 0; kx < kernel; ++kx) {
          const double* src = dcols.data() + ((static_cast<std::size_t>(ci) * kernel + ky) * kernel + kx) * hw;
          const int x_lo = std::max(0, pad - kx);
          const int x_hi = std::min(w, w + pad - kx);
          for (int y = 0; y < h; ++y) {
            const int sy = y + ky - pad;
            if (sy < 0 || sy >= h) continue;
            double* drow = dst + static_cast<std::size_t>(sy) * w + (kx - pad);
            const double* srow = src + static_cast<std::size_t>(y) * w;
            for (int xx = x_lo; xx < x_hi; ++xx) drow[xx] += srow[xx];
          }
        }
      }
    }
  };
  return id;
}

Tape::Id Tape::linear(Id x, ParamRef weight, ParamRef bias, int out_features) {
  const Tensor& in = value(x);
  const std::size_t n = in.size();
  require(weight.size == n * static_cast<std::size_t>(out_features), "linear weight size");
  require(bias.size == static_cast<std::size_t>(out_features), "linear bias size");
  Tensor out(out_features, 1, 1);
  for (int o = 0; o < out_features; ++o) {
    out.data[o] = bias.value[o] + kernels::dot(weight.value + o * n, in.data.data(), n);
  }
  const Id id = push(std::move(out));
  node(id).back = [this, id, x, weight, bias, out_features, n]() {
    const Tensor& g = node(id).grad;
    Tensor& gx = grad(x);
    const Tensor& in = value(x);
    for (int o = 0; o < out_features; ++o) {
      kernels::axpy(g.data[o], in.data.data(), weight.grad + o * n, n);
      kernels::axpy(g.data[o], weight.value + o * n, gx.data.data(), n);
      bias.grad[o] += g.data[o];
    }
  };
  return id;
}

Tape::Id Tape::add(Id a, Id b) {
  require(value(a).same_shape(value(b)), "add shape mismatch");
  Tensor out = value(a);
  kernels::axpy(1.0, value(b).data.data(), out.data.data(), out.size());
  const Id id = push(std::move(out));
  node(id).back = [this, id, a, b]() {
    const Tensor& g = node(id).grad;
    kernels::axpy(1.0, g.data.data(), grad(a).data.data(), g.size());
    kernels::axpy(1.0, g.data.data(), grad(b).data.data(), g.size());
  };
  return id;
}

Tape::Id Tape::add_channel_bias(Id x, Id v) {
  const Tensor& in = value(x);
  require(value(v).size() == static_cast<std::size_t>(in.channels), "channel bias size");
  Tensor out = in;
  const std::size_t hw = in.plane();
  for (int c = 0; c < in.channels; ++c) {
    const double b = value(v).data[c];
    double* dst = out.channel(c);
    for (std::size_t i = 0; i < hw; ++i) dst[i] += b;
  }
  const Id id = push(std::move(out));
  node(id).back = [this, id, x, v]() {
    const Tensor& g = node(id).grad;
    kernels::axpy(1.0, g.data.data(), grad(x).data.data(), g.size());
    Tensor& gv = grad(v);
    for (int c = 0; c < g.channels; ++c) gv.data[c] += kernels::sum(g.channel(c), g.plane());
  };
  return id;
}

Tape::Id Tape::mul(Id a, Id b) {
  require(value(a).same_shape(value(b)), "mul shape mismatch");
  Tensor out(value(a).channels, value(a).height, value(a).width);
  kernels::mul_acc(value(a).data.data(), value(b).data.data(), out.data.data(), out.size());
  const Id id = push(std::move(out));
  node(id).back = [this, id, a, b]() {
    const Tensor& g = node(id).grad;
    kernels::mul_acc(g.data.data(), value(b).data.data(), grad(a).data.data(), g.size());
    kernels::mul_acc(g.data.data(), value(a).data.data(), grad(b).data.data(), g.size());
  };
  return id;
}

Tape::Id Tape::scale(Id x, double factor) {
  Tensor out = value(x);
  for (double& v : out.data) v *= factor;
  const Id id = push(std::move(out));
  node(id).back = [this, id, x, factor]() {
    kernels::axpy(factor, node(id).grad.data.data(), grad(x).data.data(), node(id).grad.size());
  };
  return id;
}

Tape::Id Tape::silu(Id x) {
  const Tensor& in = value(x);
  Tensor out(in.channels, in.height, in.width);
  for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in.data[i] * logistic(in.data[i]);
  const Id id = push(std::move(out));
  node(id).back = [this, id, x]() {
    const Tensor& g = node(id).grad;
    const Tensor& in = value(x);
    Tensor& gx = grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = logistic(in.data[i]);
      gx.data[i] += g.data[i] * s * (1.0 + in.data[i] * (1.0 - s));
    }
  };
  return id;
}

Tape::Id Tape::sigmoid(Id x) {
  const Tensor& in = value(x);
  Tensor out(in.channels, in.height, in.width);
  for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = logistic(in.data[i]);
  const Id id = push(std::move(out));
  node(id).back = [this, id, x]() {
    const Tensor& g = node(id).grad;
    const Tensor& y = value(id);
    Tensor& gx = grad(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
  };
  return id;
}

Tape::Id Tape::avg_pool2(Id x) {
  const Tensor& in = value(x);
  require(in.height % 2 == 0 && in.width % 2 == 0, "avg_pool2 needs even dimensions");
  const int oh = in.height / 2;
  const int ow = in.width / 2;
  Tensor out(in.channels, oh, ow);
  for (int c = 0; c < in.channels; ++c) {
    const double* src = in.channel(c);
    double* dst = out.channel(c);
    for (int y = 0; y < oh; ++y) {
      const double* r0 = src + static_cast<std::size_t>(2 * y) * in.width;
      const double* r1 = r0 + in.width;
      for (int xx = 0; xx < ow; ++xx) {
        dst[y * ow + xx] = 0.25 * (r0[2 * xx] + r0[2 * xx + 1] + r1[2 * xx] + r1[2 * xx + 1]);
      }
    }
  }
  const Id id = push(std::move(out));
  node(id).back = [this, id, x, oh, ow]() {
    const Tensor& g = node(id).grad;
    Tensor& gx = grad(x);
    for (int c = 0; c < g.channels; ++c) {
      const double* src = g.channel(c);
      double* dst = gx.channel(c);
      for (int y = 0; y < oh; ++y) {
        double* r0 = dst + static_cast<std::size_t>(2 * y) * gx.width;
        double* r1 = r0 + gx.width;
        for (int xx = 0; xx < ow; ++xx) {
          const double v = 0.25 * src[y * ow + xx];
          r0[2 * xx] += v;
          r0[2 * xx + 1] += v;
          r1[2 * xx] += v;
          r1[2 * xx + 1] += v;
        }
      }
    }
  };
  return id;
}

Tape::Id Tape::upsample2(Id x) {
  const Tensor& in = value(x);
  const int oh = 2 * in.height;
  const int ow = 2 * in.width;
  const Taps ty = upsample_taps(in.height);
  const Taps tx = upsample_taps(in.width);
  Tensor out(in.channels, oh, ow);
  for (int c = 0; c < in.channels; ++c) {
    const double* src = in.channel(c);
    double* dst = out.channel(c);
    for (int y = 0; y < oh; ++y) {
      const double* r0 = src + static_cast<std::size_t>(ty.src0[y]) * in.width;
      const double* r1 = src + static_cast<std::size_t>(ty.src1[y]) * in.width;
      for (int xx = 0; xx < ow; ++xx) {
        const double top = tx.w0[xx] * r0[tx.src0[xx]] + tx.w1[xx] * r0[tx.src1[xx]];
        const double bot = tx.w0[xx] * r1[tx.src0[xx]] + tx.w1[xx] * r1[tx.src1[xx]];
        dst[static_cast<std::size_t>(y) * ow + xx] = ty.w0[y] * top + ty.w1[y] * bot;
      }
    }
  }
  const Id id = push(std::move(out));
  node(id).back = [this, id, x, ty, tx, oh, ow]() {
    const Tensor& g = node(id).grad;
    Tensor& gx = grad(x);
    for (int c = 0; c < g.channels; ++c) {
      const double* src = g.channel(c);
      double* dst = gx.channel(c);
      for (int y = 0; y < oh; ++y) {
        double* r0 = dst + static_cast<std::size_t>(ty.src0[y]) * gx.width;
        double* r1 = dst + static_cast<std::size_t>(ty.src1[y]) * gx.width;
        for (int xx = 0; xx < ow; ++xx) {
          const double v = src[static_cast<std::size_t>(y) * ow + xx];
          const double top = ty.w0[y] * v;
          const double bot = ty.w1[y] * v;
          r0[tx.src0[xx]] += tx.w0[xx] * top;
          r0[tx.src1[xx]] += tx.w1[xx] * top;
          r1[tx.src0[xx]] += tx.w0[xx] * bot;
          r1[tx.src1[xx]] += tx.w1[xx] * bot;
        }
      }
    }
  };
  return id;
}

Tape::Id Tape::concat(Id a, Id b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.height == tb.height && ta.width == tb.width, "concat spatial mismatch");
  Tensor out(ta.channels + tb.channels, ta.height, ta.width);
  std::copy(ta.data.begin(), ta.data.end(), out.data.begin());
  std::copy(tb.data.begin(), tb.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(ta.size()));
  const Id id = push(std::move(out));
  node(id).back = [this, id, a, b]() {
    const Tensor& g = node(id).grad;
    Tensor& ga = grad(a);
    Tensor& gb = grad(b);
    kernels::axpy(1.0, g.data.data(), ga.data.data(), ga.size());
    kernels::axpy(1.0, g.data.data() + ga.size(), gb.data.data(), gb.size());
  };
  return id;
}

Tape::Id Tape::attention(Id q, Id k, Id v) {
  const Tensor& tq = value(q);
  const Tensor& tk = value(k);
  const Tensor& tv = value(v);
  require(tq.channels == tk.channels, "attention query/key width mismatch");
  require(tk.plane() == tv.plane(), "attention key/value length mismatch");
  const int d = tq.channels;
  const std::size_t nq = tq.plane();
  const std::size_t nk = tk.plane();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d));

  // Pixel-major copies so every score is one contiguous dot product.
  std::vector<double> qt(nq * d), kt(nk * d);
  for (int c = 0; c < d; ++c) {
    for (std::size_t n = 0; n < nq; ++n) qt[n * d + c] = tq.channel(c)[n];
    for (std::size_t m = 0; m < nk; ++m) kt[m * d + c] = tk.channel(c)[m];
  }
  std::vector<double> attn(nq * nk);
  for (std::size_t n = 0; n < nq; ++n) {
    double* row = attn.data() + n * nk;
    double peak = -INFINITY;
    for (std::size_t m = 0; m < nk; ++m) {
      row[m] = inv_sqrt * kernels::dot(qt.data() + n * d, kt.data() + m * d, static_cast<std::size_t>(d));
      peak = std::max(peak, row[m]);
    }
    double total = 0.0;
    for (std::size_t m = 0; m < nk; ++m) {
      row[m] = std::exp(row[m] - peak);
      total += row[m];
    }
    for (std::size_t m = 0; m < nk; ++m) row[m] /= total;
  }
  Tensor out(tv.channels, tq.height, tq.width);
  for (int c = 0; c < tv.channels; ++c) {
    const double* vc = tv.channel(c);
    double* oc = out.channel(c);
    for (std::size_t n = 0; n < nq; ++n) oc[n] = kernels::dot(attn.data() + n * nk, vc, nk);
  }

  const Id id = push(std::move(out));
  node(id).saved = std::move(attn);
  node(id).back = [this, id, q, k, v, d, nq, nk, inv_sqrt]() {
    const Tensor& g = node(id).grad;
    const std::vector<double>& a = node(id).saved;
    const Tensor& tq = value(q);
    const Tensor& tk = value(k);
    const Tensor& tv = value(v);
    const int dv = tv.channels;
    Tensor& gv = grad(v);
    std::vector<double> da(nq * nk, 0.0);
    for (int c = 0; c < dv; ++c) {
      const double* gc = g.channel(c);
      const double* vc = tv.channel(c);
      double* gvc = gv.channel(c);
      for (std::size_t n = 0; n < nq; ++n) {
        kernels::axpy(gc[n], a.data() + n * nk, gvc, nk);
        kernels::axpy(gc[n], vc, da.data() + n * nk, nk);
      }
    }
    // Softmax backward in place: ds = a ⊙ (da − <a, da>).
    for (std::size_t n = 0; n < nq; ++n) {
      const double* arow = a.data() + n * nk;
      double* row = da.data() + n * nk;
      const double inner = kernels::dot(arow, row, nk);
      for (std::size_t m = 0; m < nk; ++m) row[m] = arow[m] * (row[m] - inner) * inv_sqrt;
    }
    Tensor& gq = grad(q);
    Tensor& gk = grad(k);
    for (int c = 0; c < d; ++c) {
      const double* qc = tq.channel(c);
      const double* kc = tk.channel(c);
      double* gqc = gq.channel(c);
      double* gkc = gk.channel(c);
      for (std::size_t n = 0; n < nq; ++n) {
        gqc[n] += kernels::dot(da.data() + n * nk, kc, nk);
        kernels::axpy(qc[n], da.data() + n * nk, gkc, nk);
      }
    }
  };
  return id;
}

}  // namespace echodnd::ad
