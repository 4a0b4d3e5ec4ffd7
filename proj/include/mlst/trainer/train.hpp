#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlst/numerics/adam.hpp"
#include "mlst/trainer/batching.hpp"
#include "mlst/trainer/schedule.hpp"

namespace mlst::trainer {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mean per-token cross-entropy of a teacher-forced pass.
inline Tensor batch_loss(const model::SpeechTransformer& m, const TrainingBatch& b, Mode mode, Rng* rng = nullptr) {
  const auto enc = m.encode(b.features, b.lengths, b.langs, mode, rng);
  const Tensor logits = m.decode(enc, b.prefix, b.langs, mode, rng);
  const std::size_t V = m.config().vocab_size;
  return cross_entropy(reshape(logits, {b.prefix.batch * b.prefix.length, V}), b.targets, text::Vocabulary::kPad);
}

struct StepResult {
  std::uint64_t step = 0;  // updates applied so far, including this one
  double lr = 0.0;
  double loss = 0.0;       // mean over the accumulation window
  std::size_t utterances = 0;
};

/// Accumulates gradients over every batch (each scaled by 1/n), then applies one
/// Adam update at lr_at(updates so far).
inline StepResult train_step(model::SpeechTransformer& m, const std::vector<TrainingBatch>& batches, AdamState& adam,
                             const LRSchedule& schedule, Rng& dropout_rng) {
  if (batches.empty()) throw std::invalid_argument("train_step: no batches");
  const double w = 1.0 / static_cast<double>(batches.size());
  m.parameters().zero_grad();
  StepResult r;
  double total = 0.0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const TrainingBatch& b = batches[i];
    Tensor loss = batch_loss(m, b, Mode::kTrain, &dropout_rng);
    const double v = loss.item();
    if (!std::isfinite(v)) {
      std::string ids;
      for (std::size_t k = 0; k < b.ids.size(); ++k)
        ids += (k ? "," : "") + b.ids[k] + "/" + std::to_string(b.langs[k]);
      m.parameters().zero_grad();
      throw TrainingError("non-finite loss at update " + std::to_string(adam.step) + ", micro-batch " +
                          std::to_string(i) + " (utterance/lang: " + ids + ")");
    }
    loss.backward(w);
    total += v;
    r.utterances += b.size();
  }
  r.lr = lr_at(adam.step, schedule);
  adam_step(m.parameters(), adam, r.lr);
  r.step = adam.step;
  r.loss = total * w;
  return r;
}

struct TrainOptions {
  LRSchedule schedule;
  std::size_t accumulation = 16;
  std::size_t max_per_lang = 8;
  std::uint64_t seed = 1;
  std::optional<std::size_t> max_epochs;
};

/// Composer-driven loop: each step() draws `accumulation` batches and applies one update.
/// Batches of a single utterance are skipped (training-mode batch norm needs two).
class Trainer {
 public:
  Trainer(model::SpeechTransformer& m, const Corpus& corpus, const TrainOptions& opt, AdamState adam = {})
      : model_(m),
        corpus_(corpus),
        opt_(opt),
        composer_(corpus.sizes(), opt.seed, opt.max_per_lang, opt.max_epochs),
        adam_(std::move(adam)),
        dropout_rng_(opt.seed ^ 0xd1b54a32d192ed03ULL) {
    opt_.schedule.validate();
    if (opt_.accumulation == 0) throw std::invalid_argument("trainer: accumulation must be positive");
  }

  /// One update, or nullopt when the data is exhausted.
  std::optional<StepResult> step() {
    std::vector<TrainingBatch> window;
    last_groups_.clear();
    while (window.size() < opt_.accumulation) {
      auto b = composer_.next();
      if (!b) break;
      if (b->size() < 2) {
        ++skipped_;
        continue;
      }
      for (const auto& g : b->groups) last_groups_.push_back({g.lang, g.items.size()});
      window.push_back(collate(corpus_, *b, model_.config().feature_dim));
    }
    if (window.empty()) return std::nullopt;
    return train_step(model_, window, adam_, opt_.schedule, dropout_rng_);
  }

  AdamState& adam() { return adam_; }
  const TrainOptions& options() const { return opt_; }
  std::size_t skipped_batches() const { return skipped_; }
  /// (language, group size) for every group of the last window.
  const std::vector<std::pair<std::size_t, std::size_t>>& last_groups() const { return last_groups_; }

 private:
  model::SpeechTransformer& model_;
  const Corpus& corpus_;
  TrainOptions opt_;
  BatchComposer composer_;
  AdamState adam_;
  Rng dropout_rng_;
  std::size_t skipped_ = 0;
  std::vector<std::pair<std::size_t, std::size_t>> last_groups_;
};

}  // namespace mlst::trainer
