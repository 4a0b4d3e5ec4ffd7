#pragma once

#include <set>
#include <string>
#include <vector>

#include "mlst/audiofeat/manifest.hpp"
#include "mlst/trainer/checkpoint.hpp"

namespace mlst::trainer {

inline bool is_transferable(const std::string& name) {
  return name.rfind("encoder.", 0) == 0 && name.find(".forcing.") == std::string::npos;
}

/// Copies every encoder parameter and buffer (language tables excluded) from an
/// ASR checkpoint into `slt`. All names and shapes are checked before anything
/// is written. Returns the number of tensors copied.
inline std::size_t transfer_encoder(const Checkpoint& asr, model::SpeechTransformer& slt) {
  std::vector<std::pair<const NamedTensor*, Tensor*>> plan;
  std::set<std::string> seen;
  for (const auto* set : {&asr.parameters, &asr.buffers})
    for (const auto& t : *set) {
      if (!is_transferable(t.name)) continue;
      if (!slt.parameters().contains(t.name))
        throw CheckpointError("transfer: model has no tensor '" + t.name + "'");
      Tensor& dst = slt.parameters().find(t.name);
      if (dst.shape() != t.shape)
        throw CheckpointError("transfer: shape mismatch for '" + t.name + "': checkpoint " + shape_str(t.shape) +
                              ", model " + shape_str(dst.shape()));
      plan.emplace_back(&t, &dst);
      seen.insert(t.name);
    }
  for (const auto* set : {&slt.parameters().parameters(), &slt.parameters().buffers()})
    for (const auto& p : *set)
      if (is_transferable(p.name) && !seen.count(p.name))
        throw CheckpointError("transfer: checkpoint lacks encoder tensor '" + p.name + "'");
  for (auto& [src, dst] : plan) {
    auto v = dst->mutable_values();
    std::copy(src->values.begin(), src->values.end(), v.begin());
  }
  return plan.size();
}

/// Adds one transcription row (language "en", target = transcript) per distinct
/// audio file among the translation rows, keeping each row's split.
inline std::vector<audio::ManifestEntry> mix_asr(const std::vector<audio::ManifestEntry>& rows) {
  std::vector<audio::ManifestEntry> out = rows;
  std::set<std::string> have;
  for (const auto& r : rows)
    if (r.is_asr()) have.insert(r.audio_path);
  for (const auto& r : rows) {
    if (r.is_asr() || !have.insert(r.audio_path).second) continue;
    out.push_back({r.audio_path, r.transcript, r.transcript, audio::kSourceLanguage, r.split});
  }
  return out;
}

/// Language list with "en" appended when absent.
inline std::vector<std::string> with_asr_language(std::vector<std::string> languages) {
  if (std::find(languages.begin(), languages.end(), audio::kSourceLanguage) == languages.end())
    languages.push_back(audio::kSourceLanguage);
  return languages;
}

}  // namespace mlst::trainer
