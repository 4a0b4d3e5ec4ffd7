#pragma once

#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlst/audiofeat/manifest.hpp"
#include "mlst/audiofeat/vocab.hpp"

namespace mlst::eval {

struct Alphabet {
  std::string lang;
  std::set<char32_t> chars;
};

/// Language whose alphabet holds the most characters of `text`; nullopt when no
/// character belongs to any alphabet or the top count is shared.
inline std::optional<std::size_t> detect_language(const std::string& text, const std::vector<Alphabet>& alphabets) {
  std::vector<std::size_t> counts(alphabets.size());
  for (char32_t c : text::utf8_decode(text))
    for (std::size_t a = 0; a < alphabets.size(); ++a)
      if (alphabets[a].chars.count(c)) ++counts[a];
  std::optional<std::size_t> best;
  bool tie = false;
  for (std::size_t a = 0; a < counts.size(); ++a) {
    if (counts[a] == 0) continue;
    if (!best || counts[a] > counts[*best]) {
      best = a;
      tie = false;
    } else if (counts[a] == counts[*best]) {
      tie = true;
    }
  }
  if (tie) return std::nullopt;
  return best;
}

struct AuditItem {
  std::string text;
  std::string requested;
};

/// Fraction of hypotheses per requested language whose detected language matches.
inline std::map<std::string, double> language_audit(const std::vector<AuditItem>& items,
                                                    const std::vector<Alphabet>& alphabets) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;  // correct, total
  for (const auto& it : items) {
    const auto d = detect_language(it.text, alphabets);
    auto& [ok, n] = tally[it.requested];
    ++n;
    if (d && alphabets[*d].lang == it.requested) ++ok;
  }
  std::map<std::string, double> out;
  for (const auto& [lang, t] : tally) out[lang] = static_cast<double>(t.first) / static_cast<double>(t.second);
  return out;
}

/// Per-language alphabets from reference texts: the non-space characters that
/// occur in exactly one language's references.
inline std::vector<Alphabet> alphabets_from_references(const std::vector<audio::ManifestEntry>& rows,
                                                       const std::vector<std::string>& languages) {
  std::map<char32_t, std::set<std::string>> owners;
  for (const auto& r : rows)
    for (char32_t c : text::utf8_decode(r.target_text))
      if (c != U' ') owners[c].insert(r.lang);
  std::vector<Alphabet> out;
  for (const auto& l : languages) out.push_back({l, {}});
  for (const auto& [c, langs] : owners) {
    if (langs.size() != 1) continue;
    for (auto& a : out)
      if (a.lang == *langs.begin()) a.chars.insert(c);
  }
  return out;
}

}  // namespace mlst::eval
