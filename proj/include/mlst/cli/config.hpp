#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mlst/forcing/forcing.hpp"

namespace mlst::cli {

/// Bad flags, bad config or missing inputs: exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline const std::set<std::string>& commands() {
  static const std::set<std::string> c{"extract", "synth",    "train", "asr-pretrain",
                                       "translate", "evaluate", "audit", "gradcheck"};
  return c;
}

inline std::string default_data_dir() {
  const char* env = std::getenv("MLST_DATA_DIR");
  return env && *env ? env : "data";
}

/// Every setting of a run. Empty paths resolve inside data_dir.
struct RunConfig {
  std::string command;
  std::string data_dir = default_data_dir();
  std::string manifest;
  std::string features;
  std::string audio_root;
  std::vector<std::string> languages;
  std::string split;
  std::uint64_t seed = 1;

  std::size_t d_model = 64;
  std::size_t ff_hidden = 0;  // 0: 2·d_model
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t heads = 4;
  double dropout = 0.1;
  bool penalty = true;
  std::string forcing = "none";
  std::string site = "pre";

  bool mix_asr = false;
  std::string transfer_from;
  std::string resume;
  double lr_init = 0.0003;
  double lr_max = 0.01;
  std::uint64_t warmup = 4000;
  std::uint64_t steps = 1000;
  std::size_t epochs = 0;  // 0: unlimited
  std::size_t accumulation = 16;
  std::size_t max_per_lang = 8;
  std::string checkpoint;
  std::uint64_t checkpoint_every = 0;
  std::string log;
  std::uint64_t log_every = 10;

  std::string hypotheses;
  std::string output;
  std::size_t beam = 5;
  double length_alpha = 0.6;
  std::size_t max_len = 200;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());

  std::size_t utterances = 3000;
  double noise = 0.05;

  std::size_t gradcheck_frames = 12;
  std::size_t gradcheck_entries = 6;

  bool operator==(const RunConfig&) const = default;
};

template <class C, class F>
void visit_fields(C& c, F&& f) {
  f("command", c.command);
  f("data_dir", c.data_dir);
  f("manifest", c.manifest);
  f("features", c.features);
  f("audio_root", c.audio_root);
  f("languages", c.languages);
  f("split", c.split);
  f("seed", c.seed);
  f("d_model", c.d_model);
  f("ff_hidden", c.ff_hidden);
  f("encoder_layers", c.encoder_layers);
  f("decoder_layers", c.decoder_layers);
  f("heads", c.heads);
  f("dropout", c.dropout);
  f("penalty", c.penalty);
  f("forcing", c.forcing);
  f("site", c.site);
  f("mix_asr", c.mix_asr);
  f("transfer_from", c.transfer_from);
  f("resume", c.resume);
  f("lr_init", c.lr_init);
  f("lr_max", c.lr_max);
  f("warmup", c.warmup);
  f("steps", c.steps);
  f("epochs", c.epochs);
  f("accumulation", c.accumulation);
  f("max_per_lang", c.max_per_lang);
  f("checkpoint", c.checkpoint);
  f("checkpoint_every", c.checkpoint_every);
  f("log", c.log);
  f("log_every", c.log_every);
  f("hypotheses", c.hypotheses);
  f("output", c.output);
  f("beam", c.beam);
  f("length_alpha", c.length_alpha);
  f("max_len", c.max_len);
  f("workers", c.workers);
  f("utterances", c.utterances);
  f("noise", c.noise);
  f("gradcheck_frames", c.gradcheck_frames);
  f("gradcheck_entries", c.gradcheck_entries);
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json::object();
  visit_fields(c, [&](const char* key, const auto& v) { j[key] = v; });
}

/// Applies the keys of `j` on top of `c`; unknown keys and wrong types are errors.
inline void apply_json(RunConfig& c, const nlohmann::json& j, const std::string& source) {
  if (!j.is_object()) throw UsageError(source + ": configuration must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool found = false;
    visit_fields(c, [&](const char* key, auto& v) {
      if (it.key() != key) return;
      found = true;
      try {
        it->get_to(v);
      } catch (const nlohmann::json::exception& e) {
        throw UsageError(source + ": bad value for '" + it.key() + "': " + e.what());
      }
    });
    if (!found) throw UsageError(source + ": unknown configuration key '" + it.key() + "'");
  }
}

inline nlohmann::json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config file '" + path + "' is not valid JSON: " + e.what());
  }
}

namespace detail {

inline void require(bool ok, const std::string& why) {
  if (!ok) throw UsageError(why);
}

inline void require_file(const std::string& path, const std::string& what) {
  require(std::filesystem::is_regular_file(path), what + " '" + path + "' does not exist");
}

inline std::string in_dir(const std::string& dir, const char* name) {
  return (std::filesystem::path(dir) / name).string();
}

}  // namespace detail

/// Fills default paths from data_dir and checks everything the command needs.
inline RunConfig resolve(RunConfig c) {
  using detail::in_dir;
  using detail::require;
  using detail::require_file;
  require(commands().count(c.command) != 0, "unknown command '" + c.command + "'");
  if (c.manifest.empty()) c.manifest = in_dir(c.data_dir, "manifest.tsv");
  if (c.features.empty()) c.features = in_dir(c.data_dir, "features.bin");
  if (c.checkpoint.empty())
    c.checkpoint = in_dir(c.data_dir, c.command == "asr-pretrain" ? "asr.ckpt" : "model.ckpt");
  if (c.hypotheses.empty()) c.hypotheses = in_dir(c.data_dir, "hypotheses.tsv");
  if (c.split.empty()) c.split = (c.command == "train" || c.command == "asr-pretrain") ? "train" : "test";
  if (c.output.empty()) {
    if (c.command == "evaluate") c.output = in_dir(c.data_dir, "metrics.json");
    else if (c.command == "audit") c.output = in_dir(c.data_dir, "audit.json");
    else if (c.command == "synth") c.output = c.data_dir;
  }

  try {
    (void)forcing::parse_mode(c.forcing);
    (void)forcing::parse_site(c.site);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  require(c.d_model > 0 && c.heads > 0 && c.d_model % c.heads == 0, "d_model must be a positive multiple of heads");
  require(c.encoder_layers > 0 && c.decoder_layers > 0, "layer counts must be positive");
  require(c.dropout >= 0.0 && c.dropout < 1.0, "dropout must be in [0, 1)");
  require(c.lr_init > 0.0 && c.lr_max > 0.0 && c.warmup > 0, "learning rates and warmup must be positive");
  require(c.accumulation > 0 && c.max_per_lang > 0, "accumulation and max_per_lang must be positive");
  require(c.beam > 0 && c.max_len > 0 && c.workers > 0, "beam, max_len and workers must be positive");
  require(c.length_alpha >= 0.0, "length_alpha must be non-negative");
  require(c.log_every > 0, "log_every must be positive");
  require(c.noise >= 0.0, "noise must be non-negative");
  require(c.gradcheck_frames >= 4, "gradcheck_frames must be at least 4");
  require(c.split == "train" || c.split == "dev" || c.split == "test", "unknown split '" + c.split + "'");

  const std::string& cmd = c.command;
  if (cmd == "extract") {
    require_file(c.manifest, "manifest");
  } else if (cmd == "synth") {
    require(c.utterances > 0, "utterances must be positive");
  } else if (cmd == "train" || cmd == "asr-pretrain") {
    require_file(c.manifest, "manifest");
    require_file(c.features, "feature store");
    if (!c.transfer_from.empty()) require_file(c.transfer_from, "transfer checkpoint");
    if (!c.resume.empty()) require_file(c.resume, "resume checkpoint");
    require(c.transfer_from.empty() || c.resume.empty(), "--transfer-from and --resume are exclusive");
    require(cmd == "train" || !c.mix_asr, "--mix-asr applies to train only");
  } else if (cmd == "translate") {
    require_file(c.checkpoint, "checkpoint");
    require_file(c.manifest, "manifest");
    require_file(c.features, "feature store");
  } else if (cmd == "evaluate" || cmd == "audit") {
    require_file(c.hypotheses, "hypothesis file");
    require_file(c.manifest, "manifest");
  }
  return c;
}

}  // namespace mlst::cli
