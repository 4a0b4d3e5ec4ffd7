#pragma once

#include <nlohmann/json.hpp>

#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlst/audiofeat/manifest.hpp"
#include "mlst/eval/audit.hpp"
#include "mlst/eval/bleu.hpp"

namespace mlst::eval {

/// One line of the hypothesis file: id, requested lang, detected lang, score, text.
struct HypothesisRow {
  std::string id;
  std::string requested;
  std::string detected;  // "-" when undetermined
  double score = 0.0;
  std::string text;
  bool operator==(const HypothesisRow&) const = default;
};

inline void write_hypotheses(std::ostream& out, const std::vector<HypothesisRow>& rows) {
  for (const auto& r : rows) {
    if ((r.id + r.requested + r.detected + r.text).find_first_of("\t\n") != std::string::npos)
      throw std::invalid_argument("hypothesis fields must not contain tabs or newlines");
    std::ostringstream score;
    score << std::setprecision(17) << r.score;
    out << r.id << '\t' << r.requested << '\t' << r.detected << '\t' << score.str() << '\t' << r.text << '\n';
  }
}

inline std::vector<HypothesisRow> parse_hypotheses(std::istream& in, const std::string& name = "hypotheses") {
  std::vector<HypothesisRow> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t tab; (tab = line.find('\t', start)) != std::string::npos; start = tab + 1)
      f.push_back(line.substr(start, tab - start));
    f.push_back(line.substr(start));
    if (f.size() != 5)
      throw std::runtime_error(name + ":" + std::to_string(lineno) + ": expected 5 fields, found " +
                               std::to_string(f.size()));
    HypothesisRow r{f[0], f[1], f[2], 0.0, f[4]};
    try {
      std::size_t used = 0;
      r.score = std::stod(f[3], &used);
      if (used != f[3].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw std::runtime_error(name + ":" + std::to_string(lineno) + ": bad score '" + f[3] + "'");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

inline std::vector<HypothesisRow> read_hypotheses(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open hypothesis file '" + path + "'");
  return parse_hypotheses(in, path);
}

struct LanguageMetrics {
  std::size_t utterances = 0;
  double bleu = 0.0;
  double token_accuracy = 0.0;
  double language_accuracy = 0.0;
};

/// Scores hypotheses against the manifest rows with the same (id, lang).
inline std::map<std::string, LanguageMetrics> score_hypotheses(const std::vector<HypothesisRow>& hyps,
                                                               const std::vector<audio::ManifestEntry>& refs,
                                                               const std::vector<Alphabet>& alphabets) {
  std::map<std::pair<std::string, std::string>, const audio::ManifestEntry*> by_key;
  for (const auto& r : refs) by_key[{r.audio_path, r.lang}] = &r;
  std::map<std::string, std::pair<std::vector<std::string>, std::vector<std::string>>> pairs;
  std::vector<AuditItem> audit;
  for (const auto& h : hyps) {
    auto it = by_key.find({h.id, h.requested});
    if (it == by_key.end())
      throw std::runtime_error("no reference for utterance '" + h.id + "' in language '" + h.requested + "'");
    pairs[h.requested].first.push_back(h.text);
    pairs[h.requested].second.push_back(it->second->target_text);
    audit.push_back({h.text, h.requested});
  }
  const auto lang_acc = language_audit(audit, alphabets);
  std::map<std::string, LanguageMetrics> out;
  for (const auto& [lang, p] : pairs)
    out[lang] = {p.first.size(), bleu(p.first, p.second), token_accuracy(p.first, p.second), lang_acc.at(lang)};
  return out;
}

inline nlohmann::json metrics_json(const std::map<std::string, LanguageMetrics>& m) {
  nlohmann::json j = {{"bleu", nlohmann::json::object()},
                      {"token_accuracy", nlohmann::json::object()},
                      {"language_accuracy", nlohmann::json::object()},
                      {"utterances", nlohmann::json::object()}};
  for (const auto& [lang, v] : m) {
    j["bleu"][lang] = v.bleu;
    j["token_accuracy"][lang] = v.token_accuracy;
    j["language_accuracy"][lang] = v.language_accuracy;
    j["utterances"][lang] = v.utterances;
  }
  return j;
}

}  // namespace mlst::eval
