#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlst/numerics/layers.hpp"

namespace mlst {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Moment estimates for every parameter of a ParameterSet, keyed by name.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;
};

/// One bias-corrected Adam update over all parameters, then zeroes gradients.
/// Parameters without a gradient are treated as having a zero gradient.
inline void adam_step(ParameterSet& params, AdamState& state, double lr) {
  for (const auto& p : params.parameters()) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad())
      if (!std::isfinite(g)) throw NumericalError("adam_step: non-finite gradient in parameter '" + p.name + "'");
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (auto& p : params.parameters()) {
    const std::size_t n = p.tensor.numel();
    auto& m = state.first_moment[p.name];
    auto& v = state.second_moment[p.name];
    if (m.empty()) m.assign(n, 0.0);
    if (v.empty()) v.assign(n, 0.0);
    if (m.size() != n || v.size() != n)
      throw DimensionError("adam_step: moment shape mismatch for '" + p.name + "'");
    auto w = p.tensor.mutable_values();
    const bool has = p.tensor.has_grad();
    const double* g = has ? p.tensor.grad().data() : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
  params.zero_grad();
}

}  // namespace mlst
