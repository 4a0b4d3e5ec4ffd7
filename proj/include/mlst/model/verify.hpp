#pragma once

#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mlst/model/speech_transformer.hpp"
#include "mlst/numerics/gradcheck.hpp"

namespace mlst::model {

struct GradCheckEntry {
  std::string name;
  double error = 0.0;
};

inline double worst_error(const std::vector<GradCheckEntry>& entries) {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.error);
  return w;
}

namespace detail {

inline Tensor random_values(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace detail

/// Central-difference check of every differentiable op on random small shapes.
inline std::vector<GradCheckEntry> op_gradient_suite(std::uint64_t seed = 1) {
  using detail::random_values;
  std::mt19937_64 rng(seed);
  const std::size_t B = 2, C = 3, H = 5, W = 4;
  Tensor x = random_values({B, C, H, W}, rng);
  Tensor probe = random_values({B, C, H, W}, rng);
  Tensor readout = random_values({B, C, H, W}, rng);
  Tensor w = random_values({3, C, 3, 3}, rng);
  Tensor bias = random_values({3}, rng);
  Tensor g = random_values({C}, rng, 0.5, 1.5), bt = random_values({C}, rng);
  Tensor rm({C}, 0.0), rv({C}, 1.0);
  Tensor mat = random_values({W, 3}, rng);
  Tensor lg = random_values({W}, rng, 0.5, 1.5), lb = random_values({W}, rng);
  Tensor table = random_values({6, W}, rng);
  Tensor row = random_values({W}, rng);
  const std::vector<std::int64_t> ids{1, 5, 1, 0};

  auto weighted = [seed](const Tensor& t) {
    std::mt19937_64 r(seed + 99);
    return sum(mul(t, random_values(t.shape(), r)));
  };
  auto dropped = [&] {
    std::mt19937_64 r(seed + 7);
    return weighted(dropout(x, 0.3, Mode::kTrain, &r));
  };
  std::vector<std::pair<std::string, std::pair<std::function<Tensor()>, Tensor*>>> cases = {
      {"add", {[&] { return weighted(add(x, row)); }, &x}},
      {"add.rhs", {[&] { return weighted(add(x, row)); }, &row}},
      {"sub", {[&] { return weighted(sub(x, probe)); }, &x}},
      {"mul", {[&] { return weighted(mul(x, row)); }, &x}},
      {"mul.rhs", {[&] { return weighted(mul(x, row)); }, &row}},
      {"scale", {[&] { return weighted(scale(x, -1.7)); }, &x}},
      {"matmul", {[&] { return weighted(matmul(x, mat)); }, &x}},
      {"matmul.rhs", {[&] { return weighted(matmul(x, mat)); }, &mat}},
      {"matmul_transposed", {[&] { return weighted(matmul(x, probe, true)); }, &x}},
      {"permute", {[&] { return weighted(permute(x, {2, 0, 3, 1})); }, &x}},
      {"reshape", {[&] { return weighted(reshape(x, {B * C, H * W})); }, &x}},
      {"concat", {[&] { return weighted(concat({x, probe, x}, 2)); }, &x}},
      {"slice", {[&] { return weighted(slice(x, 3, 1, W - 1)); }, &x}},
      {"sum", {[&] { return sum(mul(x, readout)); }, &x}},
      {"mean", {[&] { return mean(mul(x, x)); }, &x}},
      {"relu", {[&] { return weighted(relu(x)); }, &x}},
      {"softmax", {[&] { return weighted(softmax(x, 2)); }, &x}},
      {"dropout", {dropped, &x}},
      {"layer_norm", {[&] { return weighted(layer_norm(x, lg, lb)); }, &x}},
      {"layer_norm.gamma", {[&] { return weighted(layer_norm(x, lg, lb)); }, &lg}},
      {"layer_norm.beta", {[&] { return weighted(layer_norm(x, lg, lb)); }, &lb}},
      {"batch_norm", {[&] { return weighted(batch_norm(x, g, bt, rm, rv, Mode::kTrain)); }, &x}},
      {"batch_norm.gamma", {[&] { return weighted(batch_norm(x, g, bt, rm, rv, Mode::kTrain)); }, &g}},
      {"batch_norm.beta", {[&] { return weighted(batch_norm(x, g, bt, rm, rv, Mode::kTrain)); }, &bt}},
      {"conv2d", {[&] { return weighted(conv2d(x, w, bias, {2, 1})); }, &x}},
      {"conv2d.weight", {[&] { return weighted(conv2d(x, w, bias, {1, 2})); }, &w}},
      {"conv2d.bias", {[&] { return weighted(conv2d(x, w, bias, {1, 1})); }, &bias}},
      {"embedding", {[&] { return weighted(embedding(table, ids)); }, &table}},
      {"cross_entropy",
       {[&] { return cross_entropy(reshape(x, {B * C * H, W}), std::vector<std::int64_t>(B * C * H, 1), 0); }, &x}},
  };
  std::vector<GradCheckEntry> out;
  for (auto& [name, c] : cases) out.push_back({name, grad_check(c.first, *c.second)});
  return out;
}

/// Per-parameter check of the full model loss: two utterances of `frames` frames
/// (the second padded to 3/4 length), train mode without dropout.
inline std::vector<GradCheckEntry> model_gradient_suite(ModelConfig cfg, std::size_t frames = 12,
                                                        std::size_t max_entries = 6, std::uint64_t seed = 21) {
  cfg.dropout = 0.0;
  cfg.validate();
  SpeechTransformer m(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  const Tensor x = detail::random_values({2, frames, cfg.feature_dim}, rng);
  const std::vector<std::size_t> lengths{frames, std::max<std::size_t>(4, frames * 3 / 4)};
  std::vector<std::int64_t> langs;
  if (cfg.forcing_mode != forcing::Mode::kNone)
    langs = {0, static_cast<std::int64_t>(cfg.n_languages - 1)};
  const std::size_t L = 5, V = cfg.vocab_size;
  std::uniform_int_distribution<std::int64_t> tok(4, static_cast<std::int64_t>(V) - 1);
  TokenBatch prefix{2, L, std::vector<std::int64_t>(2 * L)};
  std::vector<std::int64_t> targets(2 * L);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t t = 0; t < L; ++t) {
      prefix.ids[b * L + t] = t == 0 ? 1 : tok(rng);
      targets[b * L + t] = t + 1 < L ? tok(rng) : 2;
    }
  targets[2 * L - 1] = 0;
  auto loss = [&] {
    const auto enc = m.encode(x, lengths, langs, Mode::kTrain);
    return cross_entropy(reshape(m.decode(enc, prefix, langs, Mode::kTrain), {2 * L, V}), targets, 0);
  };
  std::vector<GradCheckEntry> out;
  std::uint64_t probe_seed = 0;
  for (auto& p : m.parameters().parameters())
    out.push_back({p.name, grad_check(loss, p.tensor, {1e-5, max_entries, probe_seed++})});
  return out;
}

}  // namespace mlst::model
