// Copyright (c) 2026 The nash Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nash/tensor.hpp"

namespace nash {

/// Raw forward kernels. The autograd ops and the IR interpreter share these so
/// both produce bit-identical values for the same inputs.
namespace kernels {

struct ConvGeometry {
  int n, c, h, w;  // input
  int m, k;        // output channels, kernel extent
  int stride, pad;
  int oh, ow;

  static ConvGeometry make(const Shape& in, int out_channels, int kernel, int stride, int pad) {
    if (in.size() != 4) throw std::invalid_argument("conv2d expects N,C,H,W input, got " + to_string(in));
    if (stride <= 0) throw std::invalid_argument("conv2d stride must be positive");
    if (pad < 0) throw std::invalid_argument("conv2d padding must be non-negative");
    if (kernel <= 0 || kernel % 2 == 0) throw std::invalid_argument("conv2d kernel extent must be odd");
    ConvGeometry g{in[0], in[1], in[2], in[3], out_channels, kernel, stride, pad, 0, 0};
    const int eh = g.h + 2 * pad - kernel;
    const int ew = g.w + 2 * pad - kernel;
    if (eh < 0 || ew < 0) throw std::invalid_argument("conv2d window larger than padded input " + to_string(in));
    g.oh = eh / stride + 1;
    g.ow = ew / stride + 1;
    return g;
  }
};

// Valid output-column range [lo, hi) for kernel column kw.
inline void valid_cols(const ConvGeometry& g, int kw, int& lo, int& hi) {
  // iw = ow*stride - pad + kw must lie in [0, w)
  const int off = kw - g.pad;
  lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  const int last = g.w - 1 - off;  // ow*stride <= last
  hi = last < 0 ? 0 : std::min(g.ow, last / g.stride + 1);
  if (lo > hi) lo = hi;
}

/// Direct cross-correlation; each output accumulates in (c, kh, kw) order.
inline void conv2d_forward(const ConvGeometry& g, const float* x, const float* w, float* y) {
  const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
  const std::size_t out_plane = static_cast<std::size_t>(g.oh) * g.ow;
  std::fill(y, y + static_cast<std::size_t>(g.n) * g.m * out_plane, 0.0f);
  for (int n = 0; n < g.n; ++n) {
    for (int m = 0; m < g.m; ++m) {
      float* out = y + (static_cast<std::size_t>(n) * g.m + m) * out_plane;
      for (int c = 0; c < g.c; ++c) {
        const float* in = x + (static_cast<std::size_t>(n) * g.c + c) * in_plane;
        const float* wk = w + (static_cast<std::size_t>(m) * g.c + c) * g.k * g.k;
        for (int kh = 0; kh < g.k; ++kh) {
          for (int kw = 0; kw < g.k; ++kw) {
            const float wv = wk[kh * g.k + kw];
            int lo, hi;
            valid_cols(g, kw, lo, hi);
            for (int oh = 0; oh < g.oh; ++oh) {
              const int ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.h) continue;
              const float* in_row = in + static_cast<std::size_t>(ih) * g.w + (kw - g.pad);
              float* out_row = out + static_cast<std::size_t>(oh) * g.ow;
              if (g.stride == 1) {
                for (int ow = lo; ow < hi; ++ow) out_row[ow] += wv * in_row[ow];
              } else {
                for (int ow = lo; ow < hi; ++ow) out_row[ow] += wv * in_row[ow * g.stride];
              }
            }
          }
        }
      }
    }
  }
}

struct PoolGeometry {
  int n, c, h, w, k, stride, pad, oh, ow;

  static PoolGeometry make(const Shape& in, int k, int stride, int pad) {
    if (in.size() != 4) throw std::invalid_argument("maxpool2d expects N,C,H,W input, got " + to_string(in));
    if (stride <= 0) throw std::invalid_argument("maxpool2d stride must be positive");
    if (pad < 0 || pad >= k) throw std::invalid_argument("maxpool2d padding must be in [0, k)");
    if (in[2] + 2 * pad < k || in[3] + 2 * pad < k) {
      throw std::invalid_argument("maxpool2d window does not fit input " + to_string(in));
    }
    PoolGeometry g{in[0], in[1], in[2], in[3], k, stride, pad, 0, 0};
    g.oh = (g.h + 2 * pad - k) / stride + 1;
    g.ow = (g.w + 2 * pad - k) / stride + 1;
    return g;
  }
};

/// Window maximum with -inf padding. `argmax` (optional) receives the flat
/// input index of the first maximum in row-major window order.
inline void maxpool2d_forward(const PoolGeometry& g, const float* x, float* y, int* argmax) {
  const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
  const std::size_t out_plane = static_cast<std::size_t>(g.oh) * g.ow;
  for (int p = 0; p < g.n * g.c; ++p) {
    const float* in = x + p * in_plane;
    for (int oh = 0; oh < g.oh; ++oh) {
      for (int ow = 0; ow < g.ow; ++ow) {
        float best = -std::numeric_limits<float>::infinity();
        int best_idx = -1;
        for (int kh = 0; kh < g.k; ++kh) {
          const int ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.h) continue;
          for (int kw = 0; kw < g.k; ++kw) {
            const int iw = ow * g.stride - g.pad + kw;
            if (iw < 0 || iw >= g.w) continue;
            const float v = in[ih * g.w + iw];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = ih * g.w + iw;
            }
          }
        }
        const std::size_t o = p * out_plane + static_cast<std::size_t>(oh) * g.ow + ow;
        y[o] = best;
        if (argmax) argmax[o] = static_cast<int>(p * in_plane) + best_idx;
      }
    }
  }
}

/// y[n,o] = sum_f x[n,f] * w[o,f], accumulated in ascending f.
inline void linear_forward(const float* x, const float* w, float* y, int n, int f, int o) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < o; ++j) {
      float acc = 0.0f;
      for (int k = 0; k < f; ++k) acc += x[i * f + k] * w[j * f + k];
      y[i * o + j] = acc;
    }
  }
}

/// Mean over each H*W plane; sum in scan order, then divide.
inline void global_avg_pool_forward(const float* x, float* y, int planes, int hw) {
  for (int p = 0; p < planes; ++p) {
    float acc = 0.0f;
    for (int i = 0; i < hw; ++i) acc += x[p * hw + i];
    y[p] = acc / static_cast<float>(hw);
  }
}

/// Per-channel multiply; `c` holds one value or one per channel.
inline void scale_channels_forward(const float* x, float* y, std::span<const float> c, int n, int channels,
                                   int plane) {
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < channels; ++ch) {
      const float s = c.size() == 1 ? c[0] : c[ch];
      const std::size_t base = (static_cast<std::size_t>(i) * channels + ch) * plane;
      for (int k = 0; k < plane; ++k) y[base + k] = x[base + k] * s;
    }
  }
}

/// Replicates the channel axis cyclically until `out_channels` are filled.
inline void channel_tile_forward(const float* x, float* y, int n, int in_channels, int out_channels, int plane) {
  for (int i = 0; i < n; ++i) {
    for (int ch = 0; ch < out_channels; ++ch) {
      const float* src = x + (static_cast<std::size_t>(i) * in_channels + ch % in_channels) * plane;
      std::copy(src, src + plane, y + (static_cast<std::size_t>(i) * out_channels + ch) * plane);
    }
  }
}

}  // namespace kernels

namespace detail {

inline Tensor make_output(Shape shape, std::initializer_list<const Tensor*> inputs, const Tape* tape) {
  return Tensor(std::move(shape), 0.0f, should_record(tape, inputs));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
}

}  // namespace detail

/// Direct 2-D cross-correlation of input [N,C,H,W] with weight [M,C,K,K].
inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad, Tape* tape = nullptr) {
  if (w.rank() != 4 || w.dim(2) != w.dim(3)) {
    throw std::invalid_argument("conv2d weight must be [M,C,K,K], got " + to_string(w.shape()));
  }
  if (x.rank() != 4 || x.dim(1) != w.dim(1)) {
    throw std::invalid_argument("conv2d channel mismatch: input " + to_string(x.shape()) + ", weight " +
                                to_string(w.shape()));
  }
  const auto g = kernels::ConvGeometry::make(x.shape(), w.dim(0), w.dim(2), stride, pad);
  Tensor y = detail::make_output({g.n, g.m, g.oh, g.ow}, {&x, &w}, tape);
  kernels::conv2d_forward(g, x.data().data(), w.data().data(), y.data().data());
  if (should_record(tape, {&x, &w})) {
    tape->record({x, w}, y, [x, w, y, g]() mutable {
      const auto gy = y.grad();
      const auto xs = x.data();
      const auto ws = w.data();
      const bool need_x = x.requires_grad();
      const bool need_w = w.requires_grad();
      std::span<float> gx = need_x ? x.grad() : std::span<float>{};
      std::span<float> gw = need_w ? w.grad() : std::span<float>{};
      const std::size_t in_plane = static_cast<std::size_t>(g.h) * g.w;
      const std::size_t out_plane = static_cast<std::size_t>(g.oh) * g.ow;
      for (int n = 0; n < g.n; ++n) {
        for (int m = 0; m < g.m; ++m) {
          const float* go = gy.data() + (static_cast<std::size_t>(n) * g.m + m) * out_plane;
          for (int c = 0; c < g.c; ++c) {
            const std::size_t in_off = (static_cast<std::size_t>(n) * g.c + c) * in_plane;
            const std::size_t w_off = (static_cast<std::size_t>(m) * g.c + c) * g.k * g.k;
            for (int kh = 0; kh < g.k; ++kh) {
              for (int kw = 0; kw < g.k; ++kw) {
                const float wv = ws[w_off + kh * g.k + kw];
                int lo, hi;
                kernels::valid_cols(g, kw, lo, hi);
                float acc = 0.0f;
                for (int oh = 0; oh < g.oh; ++oh) {
                  const int ih = oh * g.stride - g.pad + kh;
                  if (ih < 0 || ih >= g.h) continue;
                  const std::size_t row = in_off + static_cast<std::size_t>(ih) * g.w + (kw - g.pad);
                  const float* grow = go + static_cast<std::size_t>(oh) * g.ow;
                  for (int ow = lo; ow < hi; ++ow) {
                    const std::size_t xi = row + static_cast<std::size_t>(ow) * g.stride;
                    if (need_x) gx[xi] += wv * grow[ow];
                    acc += grow[ow] * xs[xi];
                  }
                }
                if (need_w) gw[w_off + kh * g.k + kw] += acc;
              }
            }
          }
        }
      }
    });
  }
  return y;
}

/// k x k max pooling with -inf padding; gradient routes to the first argmax.
inline Tensor maxpool2d(const Tensor& x, int k, int stride, int pad, Tape* tape = nullptr) {
  const auto g = kernels::PoolGeometry::make(x.shape(), k, stride, pad);
  Tensor y = detail::make_output({g.n, g.c, g.oh, g.ow}, {&x}, tape);
  std::vector<int> argmax(y.numel());
  kernels::maxpool2d_forward(g, x.data().data(), y.data().data(), argmax.data());
  if (should_record(tape, {&x})) {
    tape->record({x}, y, [x, y, argmax = std::move(argmax)]() mutable {
      auto gx = x.grad();
      const auto gy = y.grad();
      for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += gy[i];
    });
  }
  return y;
}

/// Elementwise a + b; shapes must match exactly.
inline Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::check_same_shape(a, b, "add");
  Tensor y = detail::make_output(a.shape(), {&a, &b}, tape);
  auto ys = y.data();
  const auto as = a.data();
  const auto bs = b.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = as[i] + bs[i];
  if (should_record(tape, {&a, &b})) {
    tape->record({a, b}, y, [a, b, y]() mutable {
      const auto gy = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
      }
    });
  }
  return y;
}

/// Left fold of `add` over the operands in the given order.
inline Tensor add_n(std::span<const Tensor> xs, Tape* tape = nullptr) {
  if (xs.empty()) throw std::invalid_argument("add_n needs at least one operand");
  Tensor acc = xs[0];
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i], tape);
  return acc;
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr) {
  detail::check_same_shape(a, b, "mul");
  Tensor y = detail::make_output(a.shape(), {&a, &b}, tape);
  auto ys = y.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = a[i] * b[i];
  if (should_record(tape, {&a, &b})) {
    tape->record({a, b}, y, [a, b, y]() mutable {
      const auto gy = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * a[i];
      }
    });
  }
  return y;
}

/// Multiplies every element of x by the single-element tensor `gate`.
/// Differentiable with respect to both.
inline Tensor gate_mul(const Tensor& x, const Tensor& gate, Tape* tape = nullptr) {
  if (gate.numel() != 1) throw std::invalid_argument("gate_mul expects a one-element gate");
  Tensor y = detail::make_output(x.shape(), {&x, &gate}, tape);
  const float g = gate[0];
  auto ys = y.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = x[i] * g;
  if (should_record(tape, {&x, &gate})) {
    tape->record({x, gate}, y, [x, gate, y]() mutable {
      const auto gy = y.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        const float gv = gate[0];
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * gv;
      }
      if (gate.requires_grad()) {
        float acc = 0.0f;
        for (std::size_t i = 0; i < gy.size(); ++i) acc += gy[i] * x[i];
        gate.grad()[0] += acc;
      }
    });
  }
  return y;
}

/// Per-channel constant multiply of an [N,C,...] tensor. The constants are
/// not differentiated.
inline Tensor scale_channels(const Tensor& x, std::vector<float> c, Tape* tape = nullptr) {
  if (x.rank() < 2) throw std::invalid_argument("scale_channels expects [N,C,...]");
  const int n = x.dim(0);
  const int channels = x.dim(1);
  if (c.size() != 1 && c.size() != static_cast<std::size_t>(channels)) {
    throw std::invalid_argument("scale_channels: " + std::to_string(c.size()) + " constants for " +
                                std::to_string(channels) + " channels");
  }
  const int plane = static_cast<int>(x.numel() / (static_cast<std::size_t>(n) * channels));
  Tensor y = detail::make_output(x.shape(), {&x}, tape);
  kernels::scale_channels_forward(x.data().data(), y.data().data(), c, n, channels, plane);
  if (should_record(tape, {&x})) {
    tape->record({x}, y, [x, y, c = std::move(c), n, channels, plane]() mutable {
      auto gx = x.grad();
      const auto gy = y.grad();
      for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < channels; ++ch) {
          const float s = c.size() == 1 ? c[0] : c[ch];
          const std::size_t base = (static_cast<std::size_t>(i) * channels + ch) * plane;
          for (int k = 0; k < plane; ++k) gx[base + k] += gy[base + k] * s;
        }
      }
    });
  }
  return y;
}

inline Tensor relu(const Tensor& x, Tape* tape = nullptr) {
  Tensor y = detail::make_output(x.shape(), {&x}, tape);
  auto ys = y.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = x[i] > 0.0f ? x[i] : 0.0f;
  if (should_record(tape, {&x})) {
    tape->record({x}, y, [x, y]() mutable {
      auto gx = x.grad();
      const auto gy = y.grad();
      for (std::size_t i = 0; i < gy.size(); ++i) {
        if (x[i] > 0.0f) gx[i] += gy[i];
      }
    });
  }
  return y;
}

/// Cyclic channel replication [N,C,H,W] -> [N,out_channels,H,W]; realizes
/// the concatenate layer that lets a pooling branch widen its channels.
inline Tensor channel_tile(const Tensor& x, int out_channels, Tape* tape = nullptr) {
  if (x.rank() != 4) throw std::invalid_argument("channel_tile expects N,C,H,W");
  if (out_channels <= 0) throw std::invalid_argument("channel_tile needs positive channel count");
  const int n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor y = detail::make_output({n, out_channels, x.dim(2), x.dim(3)}, {&x}, tape);
  kernels::channel_tile_forward(x.data().data(), y.data().data(), n, c, out_channels, plane);
  if (should_record(tape, {&x})) {
    tape->record({x}, y, [x, y, n, c, out_channels, plane]() mutable {
      auto gx = x.grad();
      const auto gy = y.grad();
      for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < out_channels; ++ch) {
          const std::size_t dst = (static_cast<std::size_t>(i) * c + ch % c) * plane;
          const std::size_t src = (static_cast<std::size_t>(i) * out_channels + ch) * plane;
          for (int k = 0; k < plane; ++k) gx[dst + k] += gy[src + k];
        }
      }
    });
  }
  return y;
}

/// [N,C,H,W] -> [N,C] spatial mean.
inline Tensor global_avg_pool(const Tensor& x, Tape* tape = nullptr) {
  if (x.rank() != 4) throw std::invalid_argument("global_avg_pool expects N,C,H,W");
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor y = detail::make_output({n, c}, {&x}, tape);
  kernels::global_avg_pool_forward(x.data().data(), y.data().data(), n * c, hw);
  if (should_record(tape, {&x})) {
    tape->record({x}, y, [x, y, hw]() mutable {
      auto gx = x.grad();
      const auto gy = y.grad();
      const float inv = 1.0f / static_cast<float>(hw);
      for (std::size_t p = 0; p < gy.size(); ++p) {
        for (int i = 0; i < hw; ++i) gx[p * hw + i] += gy[p] * inv;
      }
    });
  }
  return y;
}

/// input [N,F] times weight [O,F]^T -> [N,O]. No bias.
inline Tensor linear(const Tensor& x, const Tensor& w, Tape* tape = nullptr) {
  if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(1)) {
    throw std::invalid_argument("linear: incompatible shapes " + to_string(x.shape()) + " and " +
                                to_string(w.shape()));
  }
  const int n = x.dim(0), f = x.dim(1), o = w.dim(0);
  Tensor y = detail::make_output({n, o}, {&x, &w}, tape);
  kernels::linear_forward(x.data().data(), w.data().data(), y.data().data(), n, f, o);
  if (should_record(tape, {&x, &w})) {
    tape->record({x, w}, y, [x, w, y, n, f, o]() mutable {
      const auto gy = y.grad();
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < o; ++j)
            for (int k = 0; k < f; ++k) gx[i * f + k] += gy[i * o + j] * w[j * f + k];
      }
      if (w.requires_grad()) {
        auto gw = w.grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < o; ++j)
            for (int k = 0; k < f; ++k) gw[j * f + k] += gy[i * o + j] * x[i * f + k];
      }
    });
  }
  return y;
}

/// Sum of all elements as a one-element tensor.
inline Tensor sum(const Tensor& x, Tape* tape = nullptr) {
  Tensor y = detail::make_output({1}, {&x}, tape);
  float acc = 0.0f;
  for (float v : x.data()) acc += v;
  y[0] = acc;
  if (should_record(tape, {&x})) {
    tape->record({x}, y, [x, y]() mutable {
      auto gx = x.grad();
      const float g = y.grad()[0];
      for (auto& v : gx) v += g;
    });
  }
  return y;
}

/// Mean softmax cross-entropy over the batch. logits [N,O], labels in [0,O).
inline Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tape* tape = nullptr) {
  if (logits.rank() != 2) throw std::invalid_argument("softmax_cross_entropy expects [N,O] logits");
  const int n = logits.dim(0), o = logits.dim(1);
  if (labels.size() != static_cast<std::size_t>(n)) {
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                                std::to_string(n));
  }
  for (int l : labels) {
    if (l < 0 || l >= o) throw std::invalid_argument("label " + std::to_string(l) + " outside [0," + std::to_string(o) + ")");
  }
  std::vector<float> prob(static_cast<std::size_t>(n) * o);
  float total = 0.0f;
  for (int i = 0; i < n; ++i) {
    const float* z = logits.data().data() + static_cast<std::size_t>(i) * o;
    float mx = z[0];
    for (int j = 1; j < o; ++j) mx = std::max(mx, z[j]);
    float denom = 0.0f;
    for (int j = 0; j < o; ++j) denom += std::exp(z[j] - mx);
    for (int j = 0; j < o; ++j) prob[static_cast<std::size_t>(i) * o + j] = std::exp(z[j] - mx) / denom;
    total += std::log(denom) + mx - z[labels[i]];
  }
  Tensor y = detail::make_output({1}, {&logits}, tape);
  y[0] = total / static_cast<float>(n);
  if (should_record(tape, {&logits})) {
    std::vector<int> lab(labels.begin(), labels.end());
    tape->record({logits}, y, [logits, y, prob = std::move(prob), lab = std::move(lab), n, o]() mutable {
      auto gz = logits.grad();
      const float g = y.grad()[0] / static_cast<float>(n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < o; ++j) {
          const std::size_t k = static_cast<std::size_t>(i) * o + j;
          gz[k] += g * (prob[k] - (j == lab[i] ? 1.0f : 0.0f));
        }
      }
    });
  }
  return y;
}

}  // namespace nash
