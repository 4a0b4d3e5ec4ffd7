#pragma once

#include <nlohmann/json.hpp>

#include <cstddef>
#include <stdexcept>
#include <string>

#include "mlst/forcing/forcing.hpp"

namespace mlst::model {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t feature_dim = 40;
  std::size_t d_model = 512;
  std::size_t ff_hidden = 1024;
  std::size_t n_encoder_layers = 6;
  std::size_t n_decoder_layers = 6;
  std::size_t n_heads = 8;
  double dropout = 0.1;
  std::size_t frontend_channels = 16;
  std::size_t sa2d_channels = 4;
  std::size_t sa2d_out_channels = 16;
  std::size_t vocab_size = 0;
  std::size_t n_languages = 0;
  forcing::Mode forcing_mode = forcing::Mode::kNone;
  forcing::Site forcing_site = forcing::Site::kPre;
  double forcing_sigma = 0.02;
  /// Distance penalty in encoder self-attention layers and in 2D time attention.
  bool penalty = true;
  bool penalty_in_sa2d = true;

  /// Frequency extent after the two strided front-end convolutions.
  std::size_t reduced_feature_dim() const { return ((feature_dim + 1) / 2 + 1) / 2; }
  /// Width of one time step after the 2D self-attention stack, flattened over channels.
  std::size_t post_width() const { return sa2d_out_channels * reduced_feature_dim(); }

  std::size_t site_width(forcing::Site s) const {
    switch (s) {
      case forcing::Site::kPre: return feature_dim;
      case forcing::Site::kPost: return post_width();
      case forcing::Site::kFinal: return d_model;
      case forcing::Site::kDecoder: return d_model;
    }
    return 0;
  }

  void validate() const {
    auto need = [](bool ok, const std::string& why) {
      if (!ok) throw ConfigError("model config: " + why);
    };
    need(feature_dim >= 4, "feature_dim must be >= 4");
    need(d_model > 0 && n_heads > 0 && d_model % n_heads == 0, "d_model must be divisible by n_heads");
    need(d_model % 2 == 0, "d_model must be even for the sinusoidal encoding");
    need(ff_hidden > 0 && frontend_channels > 0 && sa2d_channels > 0 && sa2d_out_channels > 0,
         "all extents must be positive");
    need(n_encoder_layers > 0 && n_decoder_layers > 0, "layer counts must be positive");
    need(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
    need(vocab_size > 4, "vocab_size must exceed the reserved ids");
    need(forcing_mode == forcing::Mode::kNone || n_languages > 0, "forcing needs at least one language");
  }

  bool operator==(const ModelConfig&) const = default;

  /// Full-size settings.
  static ModelConfig paper(std::size_t vocab, std::size_t languages) {
    ModelConfig c;
    c.vocab_size = vocab;
    c.n_languages = languages;
    return c;
  }

  /// Small wiring-identical model for tests and laptop runs.
  static ModelConfig desk(std::size_t vocab, std::size_t languages, std::size_t d_model = 64) {
    ModelConfig c;
    c.d_model = d_model;
    c.ff_hidden = 2 * d_model;
    c.n_encoder_layers = 2;
    c.n_decoder_layers = 2;
    c.n_heads = 4;
    c.vocab_size = vocab;
    c.n_languages = languages;
    return c;
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"feature_dim", c.feature_dim},
                     {"d_model", c.d_model},
                     {"ff_hidden", c.ff_hidden},
                     {"n_encoder_layers", c.n_encoder_layers},
                     {"n_decoder_layers", c.n_decoder_layers},
                     {"n_heads", c.n_heads},
                     {"dropout", c.dropout},
                     {"frontend_channels", c.frontend_channels},
                     {"sa2d_channels", c.sa2d_channels},
                     {"sa2d_out_channels", c.sa2d_out_channels},
                     {"vocab_size", c.vocab_size},
                     {"n_languages", c.n_languages},
                     {"forcing_mode", forcing::to_string(c.forcing_mode)},
                     {"forcing_site", forcing::to_string(c.forcing_site)},
                     {"forcing_sigma", c.forcing_sigma},
                     {"penalty", c.penalty},
                     {"penalty_in_sa2d", c.penalty_in_sa2d}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "feature_dim") d.feature_dim = it->get<std::size_t>();
    else if (k == "d_model") d.d_model = it->get<std::size_t>();
    else if (k == "ff_hidden") d.ff_hidden = it->get<std::size_t>();
    else if (k == "n_encoder_layers") d.n_encoder_layers = it->get<std::size_t>();
    else if (k == "n_decoder_layers") d.n_decoder_layers = it->get<std::size_t>();
    else if (k == "n_heads") d.n_heads = it->get<std::size_t>();
    else if (k == "dropout") d.dropout = it->get<double>();
    else if (k == "frontend_channels") d.frontend_channels = it->get<std::size_t>();
    else if (k == "sa2d_channels") d.sa2d_channels = it->get<std::size_t>();
    else if (k == "sa2d_out_channels") d.sa2d_out_channels = it->get<std::size_t>();
    else if (k == "vocab_size") d.vocab_size = it->get<std::size_t>();
    else if (k == "n_languages") d.n_languages = it->get<std::size_t>();
    else if (k == "forcing_mode") d.forcing_mode = forcing::parse_mode(it->get<std::string>());
    else if (k == "forcing_site") d.forcing_site = forcing::parse_site(it->get<std::string>());
    else if (k == "forcing_sigma") d.forcing_sigma = it->get<double>();
    else if (k == "penalty") d.penalty = it->get<bool>();
    else if (k == "penalty_in_sa2d") d.penalty_in_sa2d = it->get<bool>();
    else throw ConfigError("model config: unknown key '" + k + "'");
  }
  c = d;
}

}  // namespace mlst::model
