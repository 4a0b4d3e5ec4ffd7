#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlst/audiofeat/manifest.hpp"
#include "mlst/audiofeat/mel.hpp"
#include "mlst/audiofeat/vocab.hpp"
#include "mlst/model/speech_transformer.hpp"

namespace mlst::trainer {

/// One training or evaluation example with its features resident in memory.
struct Utterance {
  std::string id;
  std::size_t lang = 0;
  std::size_t frames = 0;
  std::vector<double> features;  // frames × feature_dim, normalised
  std::string target_text;
  std::vector<std::int64_t> target;  // character ids, no bos/eos
};

/// Utterances grouped by language id; `languages[i]` names id i.
struct Corpus {
  std::vector<std::string> languages;
  std::vector<std::vector<Utterance>> by_language;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& v : by_language) n += v.size();
    return n;
  }
  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s;
    for (const auto& v : by_language) s.push_back(v.size());
    return s;
  }
};

using FeatureSource = std::function<audio::FeatureSequence(const std::string& id)>;

inline std::size_t language_index(const std::vector<std::string>& languages, const std::string& lang) {
  auto it = std::find(languages.begin(), languages.end(), lang);
  if (it == languages.end()) throw std::invalid_argument("language '" + lang + "' is not in the language list");
  return static_cast<std::size_t>(it - languages.begin());
}

/// Rows of `split` whose language is listed, with features looked up by audio path
/// and normalised per utterance. Row order is preserved within each language.
inline Corpus load_corpus(const std::vector<audio::ManifestEntry>& rows, const FeatureSource& features,
                          const text::Vocabulary& vocab, const std::vector<std::string>& languages,
                          const std::string& split, std::size_t feature_dim = 40) {
  Corpus c{languages, std::vector<std::vector<Utterance>>(languages.size())};
  for (const auto& r : rows) {
    if (r.split != split) continue;
    auto it = std::find(languages.begin(), languages.end(), r.lang);
    if (it == languages.end()) continue;
    audio::FeatureSequence fs = audio::normalize(features(r.audio_path));
    if (fs.bins != feature_dim)
      throw std::invalid_argument("features of '" + r.audio_path + "' have " + std::to_string(fs.bins) +
                                  " bins, expected " + std::to_string(feature_dim));
    Utterance u;
    u.id = r.audio_path;
    u.lang = static_cast<std::size_t>(it - languages.begin());
    u.frames = fs.frames;
    u.features = std::move(fs.data);
    u.target_text = r.target_text;
    u.target = vocab.encode(r.target_text);
    c.by_language[u.lang].push_back(std::move(u));
  }
  return c;
}

/// Uniform index in [0, n) by rejection; independent of the standard library's distributions.
inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t r;
  do r = rng();
  while (r >= limit);
  return static_cast<std::size_t>(r % bound);
}

inline void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

struct LanguageGroup {
  std::size_t lang = 0;
  std::vector<std::size_t> items;  // indices into Corpus::by_language[lang]
};

struct ComposedBatch {
  std::vector<LanguageGroup> groups;

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& g : groups) n += g.items.size();
    return n;
  }
};

/// Draws up to `max_per_lang` utterances from every language that still has
/// data. Each language walks its own shuffled order from an independent
/// seeded stream and reshuffles when its epoch ends.
class BatchComposer {
 public:
  BatchComposer(const std::vector<std::size_t>& sizes, std::uint64_t seed, std::size_t max_per_lang = 8,
                std::optional<std::size_t> max_epochs = std::nullopt)
      : max_per_lang_(max_per_lang), max_epochs_(max_epochs) {
    if (max_per_lang == 0) throw std::invalid_argument("batch composer: max_per_lang must be positive");
    for (std::size_t l = 0; l < sizes.size(); ++l) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                        static_cast<std::uint32_t>(l)};
      Stream s{std::mt19937_64(seq), std::vector<std::size_t>(sizes[l]), 0, 0};
      streams_.push_back(std::move(s));
      start_epoch(streams_.back());
    }
  }

  /// Next batch, or nullopt once every language has used up its epochs.
  std::optional<ComposedBatch> next() {
    ComposedBatch b;
    for (std::size_t l = 0; l < streams_.size(); ++l) {
      Stream& s = streams_[l];
      if (s.order.empty()) continue;
      if (s.cursor == s.order.size()) {
        if (max_epochs_ && s.epochs >= *max_epochs_) continue;
        start_epoch(s);
      }
      const std::size_t n = std::min(max_per_lang_, s.order.size() - s.cursor);
      LanguageGroup g{l, {s.order.begin() + s.cursor, s.order.begin() + s.cursor + n}};
      s.cursor += n;
      b.groups.push_back(std::move(g));
    }
    if (b.groups.empty()) return std::nullopt;
    return b;
  }

  std::size_t epoch(std::size_t lang) const { return streams_.at(lang).epochs; }

 private:
  struct Stream {
    std::mt19937_64 rng;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    std::size_t epochs = 0;
  };

  void start_epoch(Stream& s) {
    for (std::size_t i = 0; i < s.order.size(); ++i) s.order[i] = i;
    shuffle(s.order, s.rng);
    s.cursor = 0;
    ++s.epochs;
  }

  std::size_t max_per_lang_;
  std::optional<std::size_t> max_epochs_;
  std::vector<Stream> streams_;
};

/// Padded tensors for one batch: features B×T×F with frame counts, decoder
/// input (bos + target) and output (target + eos) padded with the pad id.
struct TrainingBatch {
  Tensor features;
  std::vector<std::size_t> lengths;
  model::TokenBatch prefix;
  std::vector<std::int64_t> targets;
  std::vector<std::int64_t> langs;
  std::vector<std::string> ids;

  std::size_t size() const { return lengths.size(); }
};

inline TrainingBatch collate(const std::vector<const Utterance*>& utts, std::size_t feature_dim = 40) {
  if (utts.empty()) throw std::invalid_argument("collate: empty batch");
  std::size_t T = 0, L = 0;
  for (const auto* u : utts) {
    T = std::max(T, u->frames);
    L = std::max(L, u->target.size() + 1);
  }
  const std::size_t B = utts.size();
  std::vector<double> x(B * T * feature_dim, 0.0);
  TrainingBatch b;
  b.prefix = model::TokenBatch{B, L, std::vector<std::int64_t>(B * L, text::Vocabulary::kPad)};
  b.targets.assign(B * L, text::Vocabulary::kPad);
  for (std::size_t i = 0; i < B; ++i) {
    const Utterance& u = *utts[i];
    std::copy(u.features.begin(), u.features.end(), x.begin() + static_cast<std::ptrdiff_t>(i * T * feature_dim));
    b.lengths.push_back(u.frames);
    b.langs.push_back(static_cast<std::int64_t>(u.lang));
    b.ids.push_back(u.id);
    b.prefix.ids[i * L] = text::Vocabulary::kBos;
    for (std::size_t t = 0; t < u.target.size(); ++t) {
      b.prefix.ids[i * L + t + 1] = u.target[t];
      b.targets[i * L + t] = u.target[t];
    }
    b.targets[i * L + u.target.size()] = text::Vocabulary::kEos;
  }
  b.features = Tensor({B, T, feature_dim}, std::move(x));
  return b;
}

inline TrainingBatch collate(const Corpus& corpus, const ComposedBatch& batch, std::size_t feature_dim = 40) {
  std::vector<const Utterance*> utts;
  for (const auto& g : batch.groups)
    for (auto i : g.items) utts.push_back(&corpus.by_language.at(g.lang).at(i));
  return collate(utts, feature_dim);
}

}  // namespace mlst::trainer
