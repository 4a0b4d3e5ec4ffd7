#pragma once

#include <cmath>
#include <deque>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mlst/numerics/ops.hpp"

namespace mlst {

/// A named trainable tensor. Names are dot-separated paths ("encoder.frontend.conv1.weight").
struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Ordered registry of trainable parameters and non-trainable buffers
/// (batch-norm running statistics). Names are unique across both.
class ParameterSet {
 public:
  Tensor& add_parameter(const std::string& name, Tensor t) {
    check_unique(name);
    t.set_requires_grad(true);
    params_.push_back({name, std::move(t)});
    index_[name] = {true, params_.size() - 1};
    return params_.back().tensor;
  }

  Tensor& add_buffer(const std::string& name, Tensor t) {
    check_unique(name);
    t.set_requires_grad(false);
    buffers_.push_back({name, std::move(t)});
    index_[name] = {false, buffers_.size() - 1};
    return buffers_.back().tensor;
  }

  std::deque<Parameter>& parameters() { return params_; }
  const std::deque<Parameter>& parameters() const { return params_; }
  std::deque<Parameter>& buffers() { return buffers_; }
  const std::deque<Parameter>& buffers() const { return buffers_; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  Tensor& find(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter or buffer named '" + name + "'");
    return it->second.first ? params_[it->second.second].tensor : buffers_[it->second.second].tensor;
  }
  const Tensor& find(const std::string& name) const { return const_cast<ParameterSet*>(this)->find(name); }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

 private:
  void check_unique(const std::string& name) const {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  }

  // deque: layers keep pointers to registered tensors
  std::deque<Parameter> params_;
  std::deque<Parameter> buffers_;
  std::map<std::string, std::pair<bool, std::size_t>> index_;
};

using Rng = std::mt19937_64;

inline Tensor uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor normal_tensor(Shape shape, double sigma, Rng& rng) {
  std::normal_distribution<double> dist(0.0, sigma);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

/// y = x·W + b over the last axis; W stored as in×out.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& ps, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng, bool bias = true)
      : weight_(&ps.add_parameter(prefix + ".weight",
                                  uniform_tensor({in, out}, std::sqrt(6.0 / static_cast<double>(in + out)), rng))),
        bias_(bias ? &ps.add_parameter(prefix + ".bias", Tensor({out}, 0.0)) : nullptr) {}

  Tensor operator()(const Tensor& x) const {
    Tensor y = matmul(x, *weight_);
    return bias_ ? add(y, *bias_) : y;
  }

  std::size_t in_features() const { return weight_->dim(0); }
  std::size_t out_features() const { return weight_->dim(1); }

 private:
  Tensor* weight_ = nullptr;
  Tensor* bias_ = nullptr;
};

class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParameterSet& ps, const std::string& prefix, std::size_t width)
      : gamma_(&ps.add_parameter(prefix + ".gamma", Tensor({width}, 1.0))),
        beta_(&ps.add_parameter(prefix + ".beta", Tensor({width}, 0.0))) {}

  Tensor operator()(const Tensor& x) const { return layer_norm(x, *gamma_, *beta_); }

 private:
  Tensor* gamma_ = nullptr;
  Tensor* beta_ = nullptr;
};

/// Per-channel batch norm. With `shift` off, beta is fixed at zero and not registered.
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(ParameterSet& ps, const std::string& prefix, std::size_t channels, bool shift = true)
      : gamma_(&ps.add_parameter(prefix + ".gamma", Tensor({channels}, 1.0))),
        beta_(shift ? &ps.add_parameter(prefix + ".beta", Tensor({channels}, 0.0)) : nullptr),
        zero_shift_({channels}, 0.0),
        running_mean_(&ps.add_buffer(prefix + ".running_mean", Tensor({channels}, 0.0))),
        running_var_(&ps.add_buffer(prefix + ".running_var", Tensor({channels}, 1.0))) {}

  Tensor operator()(const Tensor& x, Mode mode) const {
    return batch_norm(x, *gamma_, beta_ ? *beta_ : zero_shift_, *running_mean_, *running_var_, mode);
  }

 private:
  Tensor* gamma_ = nullptr;
  Tensor* beta_ = nullptr;
  Tensor zero_shift_;
  Tensor* running_mean_ = nullptr;
  Tensor* running_var_ = nullptr;
};

/// conv3×3 → ReLU → batch norm.
class ConvBlock {
 public:
  ConvBlock() = default;
  ConvBlock(ParameterSet& ps, const std::string& prefix, std::size_t in_ch, std::size_t out_ch, Stride2d stride,
            Rng& rng, bool norm_shift = true)
      : weight_(&ps.add_parameter(prefix + ".conv.weight",
                                  uniform_tensor({out_ch, in_ch, 3, 3},
                                                 std::sqrt(6.0 / static_cast<double>(in_ch * 9)), rng))),
        bias_(&ps.add_parameter(prefix + ".conv.bias",
                                uniform_tensor({out_ch}, 1.0 / std::sqrt(static_cast<double>(in_ch * 9)), rng))),
        norm_(ps, prefix + ".bn", out_ch, norm_shift),
        stride_(stride) {}

  Tensor operator()(const Tensor& x, Mode mode) const {
    return norm_(relu(conv2d(x, *weight_, *bias_, stride_)), mode);
  }

 private:
  Tensor* weight_ = nullptr;
  Tensor* bias_ = nullptr;
  BatchNorm2d norm_;
  Stride2d stride_;
};

}  // namespace mlst
