#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlst/audiofeat/featstore.hpp"
#include "mlst/audiofeat/manifest.hpp"
#include "mlst/eval/audit.hpp"

namespace mlst::eval {

enum class Transform { kIdentity, kReverse, kShift };

/// A toy target language: its own contiguous code point range and a bijection on
/// token sequences.
struct SyntheticLanguage {
  std::string name;
  char32_t first = U'A';
  Transform transform = Transform::kIdentity;
  std::size_t shift = 0;

  std::vector<std::size_t> apply(std::vector<std::size_t> tokens, std::size_t vocab) const {
    switch (transform) {
      case Transform::kIdentity: break;
      case Transform::kReverse: std::reverse(tokens.begin(), tokens.end()); break;
      case Transform::kShift:
        for (auto& t : tokens) t = (t + shift) % vocab;
        break;
    }
    return tokens;
  }
  std::string render(const std::vector<std::size_t>& tokens) const {
    std::string s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (i) s += ' ';
      s += text::utf8_encode(static_cast<char32_t>(first + tokens[i]));
    }
    return s;
  }
  std::set<char32_t> alphabet(std::size_t vocab) const {
    std::set<char32_t> a;
    for (std::size_t t = 0; t < vocab; ++t) a.insert(static_cast<char32_t>(first + t));
    return a;
  }
};

/// Uppercase Latin, Greek, Cyrillic, Armenian, Georgian, Hebrew.
inline constexpr char32_t kAlphabetStarts[] = {U'A', 0x03B1, 0x0430, 0x0561, 0x10D0, 0x05D0};
inline constexpr std::size_t kMaxSyntheticVocab = 20;

inline std::vector<SyntheticLanguage> synthetic_languages(const std::vector<std::string>& names) {
  if (names.size() < 2) throw std::invalid_argument("synth: need at least two languages");
  if (names.size() > std::size(kAlphabetStarts))
    throw std::invalid_argument("synth: at most " + std::to_string(std::size(kAlphabetStarts)) + " languages");
  std::vector<SyntheticLanguage> out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == audio::kSourceLanguage) throw std::invalid_argument("synth: '" + names[i] + "' is reserved");
    SyntheticLanguage l{names[i], kAlphabetStarts[i], Transform::kIdentity, 0};
    if (i % 3 == 1) l.transform = Transform::kReverse;
    if (i % 3 == 2) {
      l.transform = Transform::kShift;
      l.shift = 7 + i;
    }
    out.push_back(l);
  }
  return out;
}

struct SynthOptions {
  std::uint64_t seed = 17;
  std::size_t utterances = 3000;  // each rendered once per language
  std::vector<std::string> languages{"xa", "xb", "xc"};
  std::size_t vocab = 20;
  std::size_t min_len = 3;
  std::size_t max_len = 10;
  std::size_t frames_per_token = 8;
  std::size_t dim = 40;
  double noise = 0.05;
  double test_fraction = 0.1;
};

struct SynthDataset {
  SynthOptions options;
  std::vector<SyntheticLanguage> languages;
  std::vector<std::vector<double>> patterns;  // vocab × dim
  std::vector<std::vector<std::size_t>> tokens;
  std::vector<audio::FeatureSequence> features;
  std::vector<audio::ManifestEntry> rows;

  std::vector<Alphabet> alphabets() const {
    std::vector<Alphabet> a;
    for (const auto& l : languages) a.push_back({l.name, l.alphabet(options.vocab)});
    return a;
  }
};

inline std::string synth_id(std::size_t i) {
  std::string n = std::to_string(i);
  return "synth-" + std::string(n.size() < 6 ? 6 - n.size() : 0, '0') + n;
}

/// Source transcript: token t is the letter 'a' + t.
inline std::string source_letters(const std::vector<std::size_t>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += static_cast<char>('a' + tokens[i]);
  }
  return s;
}

/// Utterance i has a random token sequence rendered as frames_per_token copies of
/// each token's pattern plus Gaussian noise, and one row per language. The last
/// test_fraction of utterances form the test split.
inline SynthDataset synth_dataset(const SynthOptions& opt) {
  if (opt.vocab == 0 || opt.vocab > kMaxSyntheticVocab)
    throw std::invalid_argument("synth: vocab must be in 1.." + std::to_string(kMaxSyntheticVocab));
  if (opt.min_len == 0 || opt.min_len > opt.max_len) throw std::invalid_argument("synth: need 1 ≤ min_len ≤ max_len");
  if (opt.frames_per_token == 0 || opt.dim == 0) throw std::invalid_argument("synth: empty frames");
  if (!(opt.noise >= 0.0)) throw std::invalid_argument("synth: noise must be non-negative");
  if (!(opt.test_fraction >= 0.0 && opt.test_fraction < 1.0))
    throw std::invalid_argument("synth: test_fraction must be in [0, 1)");
  SynthDataset d{opt, synthetic_languages(opt.languages), {}, {}, {}, {}};

  std::mt19937_64 pattern_rng(opt.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  d.patterns.assign(opt.vocab, std::vector<double>(opt.dim));
  for (auto& p : d.patterns)
    for (auto& v : p) v = unit(pattern_rng);

  std::mt19937_64 rng(opt.seed ^ 0x5851f42d4c957f2dULL);
  std::uniform_int_distribution<std::size_t> length(opt.min_len, opt.max_len), token(0, opt.vocab - 1);
  std::normal_distribution<double> noise(0.0, 1.0);
  const auto n_test = static_cast<std::size_t>(std::ceil(opt.test_fraction * static_cast<double>(opt.utterances)));
  for (std::size_t i = 0; i < opt.utterances; ++i) {
    std::vector<std::size_t> toks(length(rng));
    for (auto& t : toks) t = token(rng);
    audio::FeatureSequence fs{synth_id(i), toks.size() * opt.frames_per_token, opt.dim, {}};
    fs.data.reserve(fs.frames * fs.bins);
    for (std::size_t t : toks)
      for (std::size_t f = 0; f < opt.frames_per_token; ++f)
        for (std::size_t k = 0; k < opt.dim; ++k) fs.data.push_back(d.patterns[t][k] + opt.noise * noise(rng));
    const std::string split = i + n_test >= opt.utterances ? "test" : "train";
    for (const auto& l : d.languages)
      d.rows.push_back({fs.id, source_letters(toks), l.render(l.apply(toks, opt.vocab)), l.name, split});
    d.tokens.push_back(std::move(toks));
    d.features.push_back(std::move(fs));
  }
  return d;
}

/// Writes `dir/manifest.tsv` and the feature store `dir/features.bin`.
inline void write_synth(const SynthDataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  audio::write_manifest((dir / "manifest.tsv").string(), d.rows);
  audio::FeatureWriter w((dir / "features.bin").string());
  for (const auto& fs : d.features) w.write(fs);
}

/// Nearest pattern to the mean of each frames_per_token block.
inline std::vector<std::size_t> oracle_decode(const audio::FeatureSequence& fs,
                                              const std::vector<std::vector<double>>& patterns,
                                              std::size_t frames_per_token) {
  std::vector<std::size_t> out;
  for (std::size_t start = 0; start + frames_per_token <= fs.frames; start += frames_per_token) {
    std::vector<double> mean(fs.bins, 0.0);
    for (std::size_t t = start; t < start + frames_per_token; ++t)
      for (std::size_t k = 0; k < fs.bins; ++k) mean[k] += fs.at(t, k) / static_cast<double>(frames_per_token);
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < patterns.size(); ++p) {
      double dist = 0.0;
      for (std::size_t k = 0; k < fs.bins; ++k) dist += (mean[k] - patterns[p][k]) * (mean[k] - patterns[p][k]);
      if (dist < best_d) {
        best_d = dist;
        best = p;
      }
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace mlst::eval
