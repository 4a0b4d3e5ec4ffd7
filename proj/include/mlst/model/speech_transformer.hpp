#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mlst/audiofeat/vocab.hpp"
#include "mlst/forcing/forcing.hpp"
#include "mlst/model/attention.hpp"
#include "mlst/model/config.hpp"
#include "mlst/model/encoding.hpp"
#include "mlst/numerics/layers.hpp"

namespace mlst::model {

/// Encoder output: B×T'×d_model plus the number of valid (non-padding) frames per utterance.
struct EncoderState {
  Tensor output;
  std::vector<std::size_t> lengths;

  std::size_t frames() const { return output.dim(1); }
  bool padded() const {
    for (auto l : lengths)
      if (l != frames()) return true;
    return false;
  }
  /// Additive cross-attention bias (undefined when nothing is padded).
  Tensor padding_bias() const { return padded() ? key_padding_bias(lengths, frames()) : Tensor(); }
};

/// Row-major B×L matrix of token ids.
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::int64_t> ids;

  std::int64_t at(std::size_t b, std::size_t t) const { return ids[b * length + t]; }
};

/// Frame count after one stride-2, padding-1 3×3 convolution.
constexpr std::size_t halve(std::size_t n) { return (n + 1) / 2; }

struct TransformerEncoderLayer {
  MultiHeadAttention attn;
  LayerNorm ln1, ln2;
  Linear ff1, ff2;

  TransformerEncoderLayer(ParameterSet& ps, const std::string& p, const ModelConfig& c, Rng& rng)
      : attn(ps, p + ".self_attn", c.d_model, c.n_heads, rng),
        ln1(ps, p + ".ln1", c.d_model),
        ln2(ps, p + ".ln2", c.d_model),
        ff1(ps, p + ".ff1", c.d_model, c.ff_hidden, rng),
        ff2(ps, p + ".ff2", c.ff_hidden, c.d_model, rng) {}
};

struct TransformerDecoderLayer {
  MultiHeadAttention self_attn, cross_attn;
  LayerNorm ln1, ln2, ln3;
  Linear ff1, ff2;

  TransformerDecoderLayer(ParameterSet& ps, const std::string& p, const ModelConfig& c, Rng& rng)
      : self_attn(ps, p + ".self_attn", c.d_model, c.n_heads, rng),
        cross_attn(ps, p + ".cross_attn", c.d_model, c.n_heads, rng),
        ln1(ps, p + ".ln1", c.d_model),
        ln2(ps, p + ".ln2", c.d_model),
        ln3(ps, p + ".ln3", c.d_model),
        ff1(ps, p + ".ff1", c.d_model, c.ff_hidden, rng),
        ff2(ps, p + ".ff2", c.ff_hidden, c.d_model, rng) {}
};

/// Speech-Transformer: strided CNN front-end, two 2D self-attention layers,
/// projection to d_model, sinusoidal positions, post-norm Transformer
/// encoder with a logarithmic distance penalty, and a character decoder.
class SpeechTransformer {
 public:
  explicit SpeechTransformer(const ModelConfig& cfg, std::uint64_t seed = 1) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    // Forcing tables draw from their own stream so the rest of the network
    // initialises identically with or without forcing.
    Rng forcing_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const auto mode = cfg_.forcing_mode;
    const auto site = cfg_.forcing_site;
    auto table_for = [&](forcing::Site s, const std::string& name) {
      if (mode == forcing::Mode::kNone || site != s) return;
      injector_ = forcing::Injector(mode, site,
                                    forcing::LanguageEmbeddingTable(params_, name, cfg_.n_languages,
                                                                    cfg_.site_width(s), cfg_.forcing_sigma,
                                                                    forcing_rng));
    };
    table_for(forcing::Site::kPre, "encoder.forcing.pre.embedding");
    frontend_.emplace_back(params_, "encoder.frontend.0", 1, cfg_.frontend_channels, Stride2d{2, 2}, rng);
    frontend_.emplace_back(params_, "encoder.frontend.1", cfg_.frontend_channels, cfg_.frontend_channels,
                           Stride2d{2, 2}, rng);
    sa2d_.emplace_back(params_, "encoder.sa2d.0", cfg_.frontend_channels, cfg_.sa2d_channels,
                       cfg_.sa2d_out_channels, cfg_.d_model, rng);
    sa2d_.emplace_back(params_, "encoder.sa2d.1", cfg_.sa2d_out_channels, cfg_.sa2d_channels,
                       cfg_.sa2d_out_channels, cfg_.d_model, rng);
    table_for(forcing::Site::kPost, "encoder.forcing.post.embedding");
    proj_ = Linear(params_, "encoder.proj", cfg_.post_width(), cfg_.d_model, rng);
    table_for(forcing::Site::kFinal, "encoder.forcing.final.embedding");
    for (std::size_t i = 0; i < cfg_.n_encoder_layers; ++i)
      enc_layers_.emplace_back(params_, "encoder.layers." + std::to_string(i), cfg_, rng);

    embed_ = &params_.add_parameter(
        "decoder.embed.weight",
        normal_tensor({cfg_.vocab_size, cfg_.d_model}, 1.0 / std::sqrt(static_cast<double>(cfg_.d_model)), rng));
    table_for(forcing::Site::kDecoder, "decoder.forcing.decoder.embedding");
    for (std::size_t i = 0; i < cfg_.n_decoder_layers; ++i)
      dec_layers_.emplace_back(params_, "decoder.layers." + std::to_string(i), cfg_, rng);
    out_ = Linear(params_, "decoder.out", cfg_.d_model, cfg_.vocab_size, rng);
  }

  SpeechTransformer(const SpeechTransformer&) = delete;
  SpeechTransformer& operator=(const SpeechTransformer&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const forcing::Injector& injector() const { return injector_; }

  /// Encoder length for an input of `frames` frames, from the shape rules of each stage.
  std::size_t encoder_length(std::size_t frames) const {
    std::size_t t = frames + (injector_.lengthens(forcing::Site::kPre) ? 1 : 0);
    t = halve(halve(t));
    if (injector_.lengthens(forcing::Site::kPost)) ++t;
    if (injector_.lengthens(forcing::Site::kFinal)) ++t;
    return t;
  }

  /// Two conv→ReLU→batch-norm blocks with stride (2,2). x: B×1×T×F.
  /// `lengths` is updated to the valid frame counts of the output.
  Tensor frontend(const Tensor& x, std::vector<std::size_t>& lengths, Mode mode) const {
    if (x.rank() != 4 || x.dim(2) < 4 || x.dim(3) < 4)
      throw DimensionError("cnn front-end needs B×C×T×F with T, F >= 4, got " + shape_str(x.shape()));
    Tensor h = x;
    for (const auto& block : frontend_) {
      h = block(h, mode);
      for (auto& l : lengths) l = halve(l);
      h = mask_frames(h, lengths);
    }
    return h;
  }

  const SelfAttention2d& sa2d(std::size_t i) const { return sa2d_.at(i); }

  /// Bias for attention along time at extent T: −penalty (if enabled) plus key padding (if any).
  Tensor time_bias(std::size_t frames, const std::vector<std::size_t>& lengths, bool with_penalty) const {
    Tensor bias;
    if (with_penalty) bias = scale(distance_penalty(frames), -1.0);
    bool padded = false;
    for (auto l : lengths) padded = padded || l != frames;
    if (padded) {
      Tensor keys = key_padding_bias(lengths, frames);
      bias = bias.defined() ? add(keys, bias) : keys;
    }
    return bias;
  }

  /// features: B×T×F (already normalised), lengths: valid frames per utterance
  /// (empty = all T), langs: target-language id per utterance (needed when forcing).
  EncoderState encode(const Tensor& features, std::vector<std::size_t> lengths, const std::vector<std::int64_t>& langs,
                      Mode mode, Rng* rng = nullptr) const {
    if (features.rank() != 3 || features.dim(2) != cfg_.feature_dim)
      throw DimensionError("encoder expects B×T×" + std::to_string(cfg_.feature_dim) + " features, got " +
                           shape_str(features.shape()));
    const std::size_t B = features.dim(0);
    if (lengths.empty()) lengths.assign(B, features.dim(1));
    if (lengths.size() != B) throw DimensionError("encoder: one length per utterance required");
    check_langs(langs, B, cfg_.forcing_site != forcing::Site::kDecoder);

    Tensor x = injector_.inject(forcing::Site::kPre, features, langs);
    if (injector_.lengthens(forcing::Site::kPre))
      for (auto& l : lengths) ++l;
    const std::size_t T = x.dim(1);
    x = mask_frames(reshape(x, {B, 1, T, cfg_.feature_dim}), lengths);

    x = frontend(x, lengths, mode);
    const Tensor sa_bias = time_bias(x.dim(2), lengths, cfg_.penalty && cfg_.penalty_in_sa2d);
    const Tensor sa_mask = frame_mask(lengths, x.dim(2));
    for (const auto& layer : sa2d_) x = layer(x, sa_bias, sa_mask, mode);

    const std::size_t Tr = x.dim(2);
    Tensor h = reshape(permute(x, {0, 2, 1, 3}), {B, Tr, cfg_.post_width()});
    h = injector_.inject(forcing::Site::kPost, h, langs);
    if (injector_.lengthens(forcing::Site::kPost))
      for (auto& l : lengths) ++l;
    h = relu(proj_(h));
    h = injector_.inject(forcing::Site::kFinal, h, langs);
    if (injector_.lengthens(forcing::Site::kFinal))
      for (auto& l : lengths) ++l;

    const std::size_t Te = h.dim(1);
    h = dropout(add(h, positional_encoding(Te, cfg_.d_model)), cfg_.dropout, mode, rng);
    const Tensor bias = time_bias(Te, lengths, cfg_.penalty);
    for (const auto& layer : enc_layers_) {
      h = layer.ln1(add(h, dropout(layer.attn(h, h, bias), cfg_.dropout, mode, rng)));
      h = layer.ln2(add(h, dropout(layer.ff2(relu(layer.ff1(h))), cfg_.dropout, mode, rng)));
    }
    return EncoderState{h, std::move(lengths)};
  }

  /// Teacher-forced decoder pass. Every prefix row starts with bos. Returns B×L×V logits.
  Tensor decode(const EncoderState& enc, const TokenBatch& prefix, const std::vector<std::int64_t>& langs, Mode mode,
                Rng* rng = nullptr) const {
    const std::size_t B = prefix.batch, L = prefix.length, D = cfg_.d_model;
    if (B != enc.output.dim(0)) throw DimensionError("decoder: prefix batch does not match encoder batch");
    if (L == 0 || prefix.ids.size() != B * L) throw DimensionError("decoder: malformed prefix batch");
    for (std::size_t b = 0; b < B; ++b) {
      if (prefix.at(b, 0) != text::Vocabulary::kBos)
        throw std::invalid_argument("decoder: prefix row " + std::to_string(b) + " does not start with bos");
    }
    for (auto id : prefix.ids)
      if (id < 0 || static_cast<std::size_t>(id) >= cfg_.vocab_size)
        throw std::out_of_range("decoder: token id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(cfg_.vocab_size));
    check_langs(langs, B, cfg_.forcing_site == forcing::Site::kDecoder);

    Tensor x = scale(reshape(embedding(*embed_, prefix.ids), {B, L, D}), std::sqrt(static_cast<double>(D)));
    if (injector_.active_at(forcing::Site::kDecoder)) {
      if (injector_.mode() == forcing::Mode::kMerge) {
        x = injector_.inject(forcing::Site::kDecoder, x, langs);
      } else {
        // the language vector takes the start-of-sequence slot
        Tensor tag = reshape(injector_.table().lookup(langs), {B, 1, D});
        x = L == 1 ? tag : concat({tag, slice(x, 1, 1, L - 1)}, 1);
      }
    }
    x = dropout(add(x, positional_encoding(L, D)), cfg_.dropout, mode, rng);
    const Tensor self_bias = causal_bias(L);
    const Tensor cross_bias = enc.padding_bias();
    for (const auto& layer : dec_layers_) {
      x = layer.ln1(add(x, dropout(layer.self_attn(x, x, self_bias), cfg_.dropout, mode, rng)));
      x = layer.ln2(add(x, dropout(layer.cross_attn(x, enc.output, cross_bias), cfg_.dropout, mode, rng)));
      x = layer.ln3(add(x, dropout(layer.ff2(relu(layer.ff1(x))), cfg_.dropout, mode, rng)));
    }
    return out_(x);
  }

 private:
  void check_langs(const std::vector<std::int64_t>& langs, std::size_t batch, bool needed_here) const {
    if (cfg_.forcing_mode == forcing::Mode::kNone || !needed_here) return;
    if (langs.size() != batch)
      throw forcing::ForcingError("target forcing is enabled: expected " + std::to_string(batch) +
                                  " language ids, got " + std::to_string(langs.size()));
  }

  static Tensor frame_mask(const std::vector<std::size_t>& lengths, std::size_t frames) {
    for (auto l : lengths)
      if (l < frames) return time_mask(lengths, frames);
    return Tensor();
  }

  static Tensor mask_frames(const Tensor& x, const std::vector<std::size_t>& lengths) {
    const Tensor m = frame_mask(lengths, x.dim(2));
    return m.defined() ? mul(x, m) : x;
  }

  ModelConfig cfg_;
  ParameterSet params_;
  forcing::Injector injector_;
  std::vector<ConvBlock> frontend_;
  std::vector<SelfAttention2d> sa2d_;
  Linear proj_;
  std::vector<TransformerEncoderLayer> enc_layers_;
  Tensor* embed_ = nullptr;
  std::vector<TransformerDecoderLayer> dec_layers_;
  Linear out_;
};

}  // namespace mlst::model
