#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlst::eval {

inline std::vector<std::string> whitespace_tokens(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

struct BleuStats {
  std::vector<std::size_t> matches;  // clipped n-gram matches, n = 1..max_n
  std::vector<std::size_t> totals;   // hypothesis n-grams
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;
  double precision(std::size_t n) const;  // 1-based n, smoothed for n ≥ 2
  double brevity_penalty() const {
    if (hyp_len == 0) return 0.0;
    return hyp_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  }
};

inline double BleuStats::precision(std::size_t n) const {
  const double m = static_cast<double>(matches.at(n - 1)), t = static_cast<double>(totals.at(n - 1));
  if (n == 1) return t == 0 ? 0.0 : m / t;
  return (m + 1.0) / (t + 1.0);
}

inline BleuStats bleu_stats(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                            std::size_t max_n = 4) {
  if (hyps.size() != refs.size())
    throw std::invalid_argument("bleu: " + std::to_string(hyps.size()) + " hypotheses but " +
                                std::to_string(refs.size()) + " references");
  if (hyps.empty()) throw std::invalid_argument("bleu: empty corpus");
  if (max_n == 0) throw std::invalid_argument("bleu: max_n must be positive");
  BleuStats s{std::vector<std::size_t>(max_n), std::vector<std::size_t>(max_n), 0, 0};
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto h = whitespace_tokens(hyps[i]), r = whitespace_tokens(refs[i]);
    s.hyp_len += h.size();
    s.ref_len += r.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      std::map<std::vector<std::string>, std::size_t> ref_counts, hyp_counts;
      for (std::size_t k = 0; k + n <= r.size(); ++k) ++ref_counts[{r.begin() + k, r.begin() + k + n}];
      for (std::size_t k = 0; k + n <= h.size(); ++k) ++hyp_counts[{h.begin() + k, h.begin() + k + n}];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        s.matches[n - 1] += std::min(c, it == ref_counts.end() ? 0 : it->second);
        s.totals[n - 1] += c;
      }
    }
  }
  return s;
}

/// Corpus BLEU in [0, 100]: geometric mean of n-gram precisions (add-one for
/// n ≥ 2) times the brevity penalty, over whitespace tokens.
inline double bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs, std::size_t max_n = 4) {
  const BleuStats s = bleu_stats(hyps, refs, max_n);
  if (s.hyp_len == 0 || s.matches[0] == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= max_n; ++n) log_sum += std::log(s.precision(n));
  return 100.0 * s.brevity_penalty() * std::exp(log_sum / static_cast<double>(max_n));
}

inline std::size_t edit_distance(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// 1 − Σ edit distance / Σ reference tokens over whitespace tokens, floored at 0.
inline double token_accuracy(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("token_accuracy: list lengths differ");
  if (hyps.empty()) throw std::invalid_argument("token_accuracy: empty corpus");
  std::size_t errors = 0, total = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto r = whitespace_tokens(refs[i]);
    errors += edit_distance(whitespace_tokens(hyps[i]), r);
    total += r.size();
  }
  if (total == 0) throw std::invalid_argument("token_accuracy: references have no tokens");
  return std::max(0.0, 1.0 - static_cast<double>(errors) / static_cast<double>(total));
}

}  // namespace mlst::eval
