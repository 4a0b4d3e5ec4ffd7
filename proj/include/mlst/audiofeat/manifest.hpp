#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mlst/audiofeat/vocab.hpp"
#include "mlst/audiofeat/wav.hpp"

namespace mlst::audio {

/// The source language of every corpus; rows tagged with it are transcription rows.
inline const std::string kSourceLanguage = "en";

struct ManifestEntry {
  std::string audio_path;
  std::string transcript;
  std::string target_text;
  std::string lang;
  std::string split;

  bool is_asr() const { return lang == kSourceLanguage; }
  bool operator==(const ManifestEntry&) const = default;
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestOptions {
  /// Accepted target languages. The source language is always accepted for
  /// rows whose target equals the transcript.
  std::vector<std::string> languages;
  /// Resolve audio paths relative to this directory and require them to exist.
  bool require_audio = false;
  std::filesystem::path audio_root;
};

inline const std::set<std::string>& known_splits() {
  static const std::set<std::string> s{"train", "dev", "test"};
  return s;
}

/// Parses a tab-separated manifest: audio_path, transcript, target_text, lang, split.
inline std::vector<ManifestEntry> parse_manifest(std::istream& in, const ManifestOptions& opt,
                                                 const std::string& name = "manifest") {
  std::vector<ManifestEntry> rows;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) -> ManifestError {
    return ManifestError(name + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      f.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (f.size() != 5) throw fail("expected 5 tab-separated fields, got " + std::to_string(f.size()));
    ManifestEntry e{f[0], f[1], f[2], f[3], f[4]};
    if (e.audio_path.empty()) throw fail("empty audio path");
    if (e.target_text.empty()) throw fail("empty target text");
    try {
      text::utf8_decode(e.transcript);
      text::utf8_decode(e.target_text);
    } catch (const std::invalid_argument& ex) {
      throw fail(ex.what());
    }
    if (!known_splits().count(e.split)) throw fail("unknown split '" + e.split + "'");
    const bool configured = std::find(opt.languages.begin(), opt.languages.end(), e.lang) != opt.languages.end();
    if (e.is_asr()) {
      if (e.target_text != e.transcript) throw fail("source-language row must have target equal to transcript");
    } else if (!configured) {
      throw fail("unknown language tag '" + e.lang + "'");
    }
    if (opt.require_audio) {
      const auto p = opt.audio_root / e.audio_path;
      if (!std::filesystem::exists(p)) throw fail("missing audio file '" + p.string() + "'");
    }
    rows.push_back(std::move(e));
  }
  return rows;
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path, const ManifestOptions& opt) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest '" + path + "'");
  return parse_manifest(in, opt, path);
}

inline void write_manifest(std::ostream& out, const std::vector<ManifestEntry>& rows) {
  for (const auto& r : rows)
    out << r.audio_path << '\t' << r.transcript << '\t' << r.target_text << '\t' << r.lang << '\t' << r.split << '\n';
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& rows) {
  std::ofstream out(path);
  if (!out) throw ManifestError("cannot write manifest '" + path + "'");
  write_manifest(out, rows);
}

/// Vocabulary over every character of the training-split targets whose language is in `languages`.
inline text::Vocabulary build_vocab(const std::vector<ManifestEntry>& rows, const std::vector<std::string>& languages) {
  std::vector<std::string> texts;
  for (const auto& r : rows) {
    if (r.split != "train") continue;
    if (std::find(languages.begin(), languages.end(), r.lang) == languages.end()) continue;
    texts.push_back(r.target_text);
  }
  return text::Vocabulary::from_texts(texts);
}

}  // namespace mlst::audio
