#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

#include "mlst/audiofeat/vocab.hpp"
#include "mlst/model/speech_transformer.hpp"

namespace mlst::eval {

struct Hypothesis {
  std::vector<std::int64_t> tokens;  // bos … eos (eos absent when truncated)
  double logprob = 0.0;              // sum of per-step log-softmax values
  std::string text;                  // reserved ids removed
  bool truncated = false;

  /// Number of generated tokens, eos included.
  std::size_t generated() const { return tokens.empty() ? 0 : tokens.size() - 1; }
};

struct DecodeOptions {
  std::size_t beam = 5;
  double length_alpha = 0.6;
  std::size_t max_len = 200;
};

/// ((5 + n) / 6)^α
inline double length_penalty(std::size_t generated, double alpha) {
  return std::pow((5.0 + static_cast<double>(generated)) / 6.0, alpha);
}

inline double normalized_score(const Hypothesis& h, double alpha) {
  return h.logprob / length_penalty(h.generated(), alpha);
}

namespace detail {

/// Log-softmax of the last position of every row of a B×L×V logit tensor.
/// Pad and bos can never be produced and get −∞.
inline std::vector<std::vector<double>> next_token_logprobs(const Tensor& logits) {
  const std::size_t B = logits.dim(0), L = logits.dim(1), V = logits.dim(2);
  std::vector<std::vector<double>> out(B, std::vector<double>(V));
  for (std::size_t b = 0; b < B; ++b) {
    const double* row = logits.data() + (b * L + L - 1) * V;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < V; ++v)
      if (v != text::Vocabulary::kPad && v != text::Vocabulary::kBos) mx = std::max(mx, row[v]);
    double z = 0.0;
    for (std::size_t v = 0; v < V; ++v)
      if (v != text::Vocabulary::kPad && v != text::Vocabulary::kBos) z += std::exp(row[v] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t v = 0; v < V; ++v)
      out[b][v] = (v == text::Vocabulary::kPad || v == text::Vocabulary::kBos)
                      ? -std::numeric_limits<double>::infinity()
                      : row[v] - lz;
  }
  return out;
}

inline model::EncoderState tile(const model::EncoderState& enc, std::size_t k) {
  if (k == 1) return enc;
  std::vector<Tensor> parts(k, enc.output);
  return {concat(parts, 0), std::vector<std::size_t>(k, enc.lengths.at(0))};
}

inline model::TokenBatch as_batch(const std::vector<std::vector<std::int64_t>>& rows) {
  model::TokenBatch b{rows.size(), rows.at(0).size(), {}};
  for (const auto& r : rows) b.ids.insert(b.ids.end(), r.begin(), r.end());
  return b;
}

inline std::vector<std::int64_t> langs_for(const model::SpeechTransformer& m, std::int64_t lang, std::size_t n) {
  if (m.config().forcing_mode == forcing::Mode::kNone) return {};
  return std::vector<std::int64_t>(n, lang);
}

}  // namespace detail

/// Encodes one utterance (T×F features) in eval mode.
inline model::EncoderState encode_one(const model::SpeechTransformer& m, const std::vector<double>& features,
                                      std::size_t frames, std::int64_t lang) {
  const std::size_t F = m.config().feature_dim;
  if (features.size() != frames * F) throw DimensionError("decode: features are not frames × feature_dim");
  return m.encode(Tensor({1, frames, F}, features), {}, detail::langs_for(m, lang, 1), Mode::kEval);
}

/// Argmax at every step until eos or max_len tokens; ties go to the lower id.
inline Hypothesis greedy_decode(const model::SpeechTransformer& m, const model::EncoderState& enc,
                                std::int64_t lang, const text::Vocabulary& vocab, std::size_t max_len) {
  NoGradGuard no_grad;
  Hypothesis h{{text::Vocabulary::kBos}, 0.0, {}, true};
  const auto langs = detail::langs_for(m, lang, 1);
  for (std::size_t step = 0; step < max_len; ++step) {
    const auto lp = detail::next_token_logprobs(m.decode(enc, detail::as_batch({h.tokens}), langs, Mode::kEval))[0];
    const auto best = static_cast<std::int64_t>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    h.tokens.push_back(best);
    h.logprob += lp[static_cast<std::size_t>(best)];
    if (best == text::Vocabulary::kEos) {
      h.truncated = false;
      break;
    }
  }
  h.text = vocab.decode(h.tokens);
  return h;
}

/// Beam search. Live prefixes are ranked by raw log-probability (ties: earlier
/// beam, then lower id); finished hypotheses by length-normalised score.
/// Stops when `beam` hypotheses have finished, none is alive, or max_len is reached.
inline Hypothesis beam_decode(const model::SpeechTransformer& m, const model::EncoderState& enc, std::int64_t lang,
                              const text::Vocabulary& vocab, const DecodeOptions& opt) {
  if (opt.beam == 0) throw std::invalid_argument("beam_decode: beam must be positive");
  NoGradGuard no_grad;
  struct Live {
    std::vector<std::int64_t> tokens;
    double logprob;
  };
  std::vector<Live> live{{{text::Vocabulary::kBos}, 0.0}};
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < opt.max_len && !live.empty() && finished.size() < opt.beam; ++step) {
    std::vector<std::vector<std::int64_t>> rows;
    for (const auto& l : live) rows.push_back(l.tokens);
    const auto lp = detail::next_token_logprobs(
        m.decode(detail::tile(enc, live.size()), detail::as_batch(rows), detail::langs_for(m, lang, live.size()),
                 Mode::kEval));
    struct Cand {
      double score;
      std::size_t from;
      std::int64_t token;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < live.size(); ++i)
      for (std::size_t v = 0; v < lp[i].size(); ++v)
        if (std::isfinite(lp[i][v])) cands.push_back({live[i].logprob + lp[i][v], i, static_cast<std::int64_t>(v)});
    const std::size_t keep = std::min(opt.beam - finished.size(), cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Cand& a, const Cand& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.from != b.from) return a.from < b.from;
                        return a.token < b.token;
                      });
    std::vector<Live> next;
    for (std::size_t c = 0; c < keep; ++c) {
      auto tokens = live[cands[c].from].tokens;
      tokens.push_back(cands[c].token);
      if (cands[c].token == text::Vocabulary::kEos) finished.push_back({std::move(tokens), cands[c].score, {}, false});
      else next.push_back({std::move(tokens), cands[c].score});
    }
    live = std::move(next);
  }
  std::vector<Hypothesis> pool = finished;
  if (pool.empty())
    for (auto& l : live) pool.push_back({std::move(l.tokens), l.logprob, {}, true});
  const auto best = std::max_element(pool.begin(), pool.end(), [&](const Hypothesis& a, const Hypothesis& b) {
    return normalized_score(a, opt.length_alpha) < normalized_score(b, opt.length_alpha);
  });
  Hypothesis h = *best;
  h.text = vocab.decode(h.tokens);
  return h;
}

/// Greedy when beam == 1, beam search otherwise.
inline Hypothesis decode(const model::SpeechTransformer& m, const model::EncoderState& enc, std::int64_t lang,
                         const text::Vocabulary& vocab, const DecodeOptions& opt) {
  return opt.beam == 1 ? greedy_decode(m, enc, lang, vocab, opt.max_len) : beam_decode(m, enc, lang, vocab, opt);
}

struct DecodeRequest {
  const std::vector<double>* features = nullptr;
  std::size_t frames = 0;
  std::int64_t lang = 0;
};

/// Decodes independent utterances on `workers` threads over a frozen model.
/// Results are stored by position, so output does not depend on the worker count.
inline std::vector<Hypothesis> decode_all(const model::SpeechTransformer& m, const std::vector<DecodeRequest>& reqs,
                                          const text::Vocabulary& vocab, const DecodeOptions& opt,
                                          std::size_t workers = 1) {
  std::vector<Hypothesis> out(reqs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < reqs.size(); i = next++) {
      try {
        const auto enc = [&] {
          NoGradGuard no_grad;
          return encode_one(m, *reqs[i].features, reqs[i].frames, reqs[i].lang);
        }();
        out[i] = decode(m, enc, reqs[i].lang, vocab, opt);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = reqs.size();
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, reqs.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace mlst::eval
