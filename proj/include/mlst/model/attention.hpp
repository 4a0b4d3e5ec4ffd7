#pragma once

#include <cmath>
#include <string>

#include "mlst/numerics/layers.hpp"

namespace mlst::model {

/// softmax(q·kᵀ·scale + bias)·v over the last two axes. `bias` may be undefined.
inline Tensor scaled_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& bias, double factor) {
  Tensor scores = scale(matmul(q, k, /*transpose_b=*/true), factor);
  if (bias.defined()) scores = add(scores, bias);
  return matmul(softmax(scores, -1), v);
}

/// Multi-head attention. The key projection has no bias: a constant added to
/// every key shifts all scores of a query equally and cancels in the softmax.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterSet& ps, const std::string& prefix, std::size_t d_model, std::size_t heads, Rng& rng)
      : q_(ps, prefix + ".q", d_model, d_model, rng),
        k_(ps, prefix + ".k", d_model, d_model, rng, /*bias=*/false),
        v_(ps, prefix + ".v", d_model, d_model, rng),
        o_(ps, prefix + ".o", d_model, d_model, rng),
        heads_(heads),
        d_head_(d_model / heads) {}

  /// query: B×Tq×D, memory: B×Tk×D, bias broadcastable to B×H×Tq×Tk.
  Tensor operator()(const Tensor& query, const Tensor& memory, const Tensor& bias) const {
    const std::size_t B = query.dim(0), Tq = query.dim(1), Tk = memory.dim(1);
    auto split = [&](const Tensor& x, std::size_t T) {
      return permute(reshape(x, {B, T, heads_, d_head_}), {0, 2, 1, 3});
    };
    Tensor ctx = scaled_attention(split(q_(query), Tq), split(k_(memory), Tk), split(v_(memory), Tk), bias,
                                  1.0 / std::sqrt(static_cast<double>(d_head_)));
    return o_(reshape(permute(ctx, {0, 2, 1, 3}), {B, Tq, heads_ * d_head_}));
  }

 private:
  Linear q_, k_, v_, o_;
  std::size_t heads_ = 1;
  std::size_t d_head_ = 1;
};

/// 2D self-attention over a B×C×T×F map. Q, K, V come from parallel conv
/// blocks with `channels` filters; each filter attends along time (with the
/// supplied bias) and, on the transposed maps, along frequency. The 2·channels
/// outputs are concatenated and fused by a final conv block. The key branch's
/// batch norm has no shift, for the same softmax invariance as above.
class SelfAttention2d {
 public:
  SelfAttention2d() = default;
  SelfAttention2d(ParameterSet& ps, const std::string& prefix, std::size_t in_channels, std::size_t channels,
                  std::size_t out_channels, std::size_t d_model, Rng& rng)
      : q_(ps, prefix + ".q", in_channels, channels, {1, 1}, rng),
        k_(ps, prefix + ".k", in_channels, channels, {1, 1}, rng, /*norm_shift=*/false),
        v_(ps, prefix + ".v", in_channels, channels, {1, 1}, rng),
        out_(ps, prefix + ".out", 2 * channels, out_channels, {1, 1}, rng),
        scale_(1.0 / std::sqrt(static_cast<double>(d_model))) {}

  /// time_bias: broadcastable to B×c×T×T (negated distance penalty plus key
  /// padding), may be undefined. mask: B×1×T×1 frame mask, may be undefined.
  Tensor operator()(const Tensor& x, const Tensor& time_bias, const Tensor& mask, Mode mode) const {
    auto masked = [&](const Tensor& t) { return mask.defined() ? mul(t, mask) : t; };
    const Tensor q = masked(q_(x, mode)), k = masked(k_(x, mode)), v = masked(v_(x, mode));
    Tensor time = scaled_attention(q, k, v, time_bias, scale_);
    Tensor freq = transpose(
        scaled_attention(transpose(q, 2, 3), transpose(k, 2, 3), transpose(v, 2, 3), Tensor(), scale_), 2, 3);
    return masked(out_(masked(concat({time, freq}, 1)), mode));
  }

  double scale() const { return scale_; }

 private:
  ConvBlock q_, k_, v_, out_;
  double scale_ = 1.0;
};

}  // namespace mlst::model
