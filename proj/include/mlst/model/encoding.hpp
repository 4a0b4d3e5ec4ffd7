#pragma once

#include <cmath>
#include <cstdlib>

#include "mlst/numerics/tensor.hpp"

namespace mlst::model {

/// Logarithmic distance penalty: 0 for d = 0, ln d otherwise.
inline double log_penalty(std::size_t distance) {
  return distance == 0 ? 0.0 : std::log(static_cast<double>(distance));
}

/// n×n matrix M[i][j] = log_penalty(|i − j|), subtracted from attention scores.
inline Tensor distance_penalty(std::size_t n) {
  std::vector<double> m(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m[i * n + j] = log_penalty(i > j ? i - j : j - i);
  return Tensor({n, n}, std::move(m));
}

/// Sinusoidal position table, T×d: sin on even columns, cos on odd, base 10000.
inline Tensor positional_encoding(std::size_t length, std::size_t d_model) {
  if (d_model % 2 != 0) throw DimensionError("positional_encoding: d_model must be even");
  std::vector<double> pe(length * d_model);
  for (std::size_t pos = 0; pos < length; ++pos)
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d_model));
      pe[pos * d_model + i] = std::sin(angle);
      pe[pos * d_model + i + 1] = std::cos(angle);
    }
  return Tensor({length, d_model}, std::move(pe));
}

inline constexpr double kMaskedScore = -1e9;

/// Additive key mask: B×1×1×S with 0 for valid keys and a large negative value for padding.
inline Tensor key_padding_bias(const std::vector<std::size_t>& lengths, std::size_t keys) {
  std::vector<double> b(lengths.size() * keys, 0.0);
  for (std::size_t i = 0; i < lengths.size(); ++i)
    for (std::size_t s = lengths[i]; s < keys; ++s) b[i * keys + s] = kMaskedScore;
  return Tensor({lengths.size(), 1, 1, keys}, std::move(b));
}

/// Multiplicative time mask for B×C×T×F maps: B×1×T×1, 1 on valid frames.
inline Tensor time_mask(const std::vector<std::size_t>& lengths, std::size_t frames) {
  std::vector<double> m(lengths.size() * frames, 0.0);
  for (std::size_t i = 0; i < lengths.size(); ++i)
    for (std::size_t t = 0; t < std::min(lengths[i], frames); ++t) m[i * frames + t] = 1.0;
  return Tensor({lengths.size(), 1, frames, 1}, std::move(m));
}

inline Tensor causal_bias(std::size_t length) {
  std::vector<double> b(length * length, 0.0);
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = i + 1; j < length; ++j) b[i * length + j] = kMaskedScore;
  return Tensor({1, 1, length, length}, std::move(b));
}

}  // namespace mlst::model
