#pragma once

#include <random>
#include <vector>

#include "mlst/model/speech_transformer.hpp"

namespace mlst::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline model::ModelConfig tiny_config(std::size_t d_model = 16, forcing::Mode mode = forcing::Mode::kNone,
                                      forcing::Site site = forcing::Site::kPre) {
  auto c = model::ModelConfig::desk(12, 3, d_model);
  c.dropout = 0.0;
  c.forcing_mode = mode;
  c.forcing_site = site;
  return c;
}

/// B rows of bos followed by random non-reserved ids.
inline model::TokenBatch random_prefix(std::size_t batch, std::size_t length, std::size_t vocab, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::int64_t> d(4, static_cast<std::int64_t>(vocab) - 1);
  model::TokenBatch p{batch, length, std::vector<std::int64_t>(batch * length)};
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < length; ++t) p.ids[b * length + t] = t == 0 ? 1 : d(rng);
  return p;
}

/// Maximum absolute elementwise difference of two equally shaped tensors.
inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

}  // namespace mlst::testing
