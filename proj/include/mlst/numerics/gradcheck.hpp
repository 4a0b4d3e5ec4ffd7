#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mlst/numerics/tensor.hpp"

namespace mlst {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Probe at most this many entries per tensor (0 = all), chosen with `seed`.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

/// Compares the analytic gradient of a scalar function with central differences.
/// `fn` must rebuild its graph from the current values of `input` on every call.
/// Returns max |a−n| / max(|a|, |n|, 1e-8) over the probed entries.
inline double grad_check(const std::function<Tensor()>& fn, Tensor& input, GradCheckOptions opt = {}) {
  const bool had = input.requires_grad();
  input.set_requires_grad(true);
  input.zero_grad();
  Tensor out = fn();
  out.backward();
  std::vector<double> analytic(input.numel(), 0.0);
  if (input.has_grad()) std::copy(input.grad().begin(), input.grad().end(), analytic.begin());
  input.zero_grad();
  input.set_requires_grad(had);

  std::vector<std::size_t> entries(input.numel());
  for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
  if (opt.max_entries != 0 && entries.size() > opt.max_entries) {
    std::mt19937_64 rng(opt.seed);
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(opt.max_entries);
  }

  NoGradGuard no_grad;
  double worst = 0.0;
  auto values = input.mutable_values();
  for (std::size_t i : entries) {
    const double orig = values[i];
    values[i] = orig + opt.eps;
    const double up = fn().item();
    values[i] = orig - opt.eps;
    const double down = fn().item();
    values[i] = orig;
    const double numeric = (up - down) / (2.0 * opt.eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace mlst
