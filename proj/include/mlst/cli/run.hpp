#pragma once

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "mlst/audiofeat/featstore.hpp"
#include "mlst/audiofeat/manifest.hpp"
#include "mlst/audiofeat/mel.hpp"
#include "mlst/audiofeat/wav.hpp"
#include "mlst/cli/config.hpp"
#include "mlst/eval/decode.hpp"
#include "mlst/eval/report.hpp"
#include "mlst/eval/synth.hpp"
#include "mlst/model/verify.hpp"
#include "mlst/trainer/checkpoint.hpp"
#include "mlst/trainer/train.hpp"
#include "mlst/trainer/transfer.hpp"

namespace mlst::cli {

/// Writes to the error stream and, when configured, to a log file.
class Logger {
 public:
  Logger(std::ostream& err, const std::string& path) : err_(err) {
    if (path.empty()) return;
    if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
      std::filesystem::create_directories(parent);
    file_.open(path, std::ios::trunc);
    if (!file_) throw UsageError("cannot open log file '" + path + "'");
  }
  void line(const std::string& s) {
    err_ << s << '\n';
    if (file_) file_ << s << '\n' << std::flush;
  }

 private:
  std::ostream& err_;
  std::ofstream file_;
};

namespace detail {

/// Distinct target languages in a manifest, in first-seen order, source language excluded.
inline std::vector<std::string> manifest_languages(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open manifest '" + path + "'");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string field; std::getline(ls, field, '\t');) f.push_back(field);
    if (f.size() < 4 || f[3] == audio::kSourceLanguage) continue;
    if (std::find(out.begin(), out.end(), f[3]) == out.end()) out.push_back(f[3]);
  }
  return out;
}

inline std::vector<std::string> target_languages(const RunConfig& c) {
  auto langs = c.languages.empty() ? manifest_languages(c.manifest) : c.languages;
  langs.erase(std::remove(langs.begin(), langs.end(), audio::kSourceLanguage), langs.end());
  return langs;
}

/// Manifest rows whose language is in `langs` or is the source language.
inline std::vector<audio::ManifestEntry> read_rows(const RunConfig& c, const std::vector<std::string>& langs,
                                                   bool require_audio = false) {
  const auto present = manifest_languages(c.manifest);
  for (const auto& l : langs)
    if (std::find(present.begin(), present.end(), l) == present.end())
      throw UsageError("language '" + l + "' does not occur in " + c.manifest);
  auto rows = audio::read_manifest(c.manifest, {present, require_audio, c.audio_root});
  std::erase_if(rows, [&](const audio::ManifestEntry& r) {
    return !r.is_asr() && std::find(langs.begin(), langs.end(), r.lang) == langs.end();
  });
  return rows;
}

/// Alphabets of every manifest language plus the source language.
inline std::vector<eval::Alphabet> reference_alphabets(const RunConfig& c,
                                                       const std::vector<audio::ManifestEntry>& rows) {
  auto langs = manifest_languages(c.manifest);
  langs.push_back(audio::kSourceLanguage);
  return eval::alphabets_from_references(rows, langs);
}

inline std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

inline void write_text_atomically(const std::string& path, const std::string& text) {
  if (auto parent = std::filesystem::path(path).parent_path(); !parent.empty())
    std::filesystem::create_directories(parent);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << text;
    if (!out) throw std::runtime_error("short write to '" + path + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline model::ModelConfig model_config(const RunConfig& c, std::size_t vocab, std::size_t languages) {
  auto m = model::ModelConfig::desk(vocab, languages, c.d_model);
  if (c.ff_hidden) m.ff_hidden = c.ff_hidden;
  m.n_encoder_layers = c.encoder_layers;
  m.n_decoder_layers = c.decoder_layers;
  m.n_heads = c.heads;
  m.dropout = c.dropout;
  m.penalty = c.penalty;
  m.forcing_mode = forcing::parse_mode(c.forcing);
  m.forcing_site = forcing::parse_site(c.site);
  m.validate();
  return m;
}

}  // namespace detail

inline int cmd_synth(const RunConfig& c, Logger& log) {
  eval::SynthOptions opt;
  opt.seed = c.seed;
  opt.utterances = c.utterances;
  opt.noise = c.noise;
  if (!c.languages.empty()) opt.languages = c.languages;
  eval::SynthDataset d;
  try {
    d = eval::synth_dataset(opt);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  eval::write_synth(d, c.output);
  log.line("wrote " + std::to_string(d.rows.size()) + " rows (" + std::to_string(d.features.size()) +
           " utterances) to " + c.output);
  return 0;
}

inline int cmd_extract(const RunConfig& c, Logger& log) {
  const auto rows = detail::read_rows(c, detail::target_languages(c), true);
  std::vector<std::string> paths;
  std::set<std::string> seen;
  for (const auto& r : rows)
    if (seen.insert(r.audio_path).second) paths.push_back(r.audio_path);
  std::vector<audio::FeatureSequence> feats(paths.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex m;
  auto work = [&] {
    audio::MelExtractor ex;
    for (std::size_t i = next++; i < paths.size(); i = next++) {
      try {
        feats[i] = ex(audio::read_wav((std::filesystem::path(c.audio_root) / paths[i]).string()), paths[i]);
      } catch (...) {
        std::lock_guard lock(m);
        if (!error) error = std::current_exception();
        next = paths.size();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(c.workers, std::max<std::size_t>(1, paths.size())); ++w)
    pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  if (auto parent = std::filesystem::path(c.features).parent_path(); !parent.empty())
    std::filesystem::create_directories(parent);
  audio::FeatureWriter w(c.features);
  for (const auto& f : feats) w.write(f);
  log.line("extracted " + std::to_string(feats.size()) + " feature sequences to " + c.features);
  return 0;
}

inline int cmd_train(const RunConfig& c, Logger& log, bool asr_only) {
  auto langs = detail::target_languages(c);
  auto rows = detail::read_rows(c, langs);
  if (asr_only) {
    auto mixed = trainer::mix_asr(rows);
    rows.clear();
    for (auto& r : mixed)
      if (r.is_asr()) rows.push_back(std::move(r));
    langs = {audio::kSourceLanguage};
  } else if (c.mix_asr) {
    rows = trainer::mix_asr(rows);
    langs = trainer::with_asr_language(langs);
  }
  if (langs.empty()) throw UsageError("no target languages in " + c.manifest);
  const auto vocab = audio::build_vocab(rows, langs);
  const audio::FeatureStore store(c.features);
  const auto corpus = trainer::load_corpus(
      rows, [&](const std::string& id) { return store.load(id); }, vocab, langs, c.split);
  if (corpus.size() == 0) throw UsageError("no '" + c.split + "' rows for the selected languages");
  std::string sizes;
  for (std::size_t l = 0; l < langs.size(); ++l)
    sizes += (l ? " " : "") + langs[l] + ":" + std::to_string(corpus.by_language[l].size());
  log.line("data: " + std::to_string(corpus.size()) + " utterances (" + sizes + "), vocabulary " +
           std::to_string(vocab.size()));

  const auto mcfg = detail::model_config(c, vocab.size(), langs.size());
  model::SpeechTransformer m(mcfg, c.seed);
  AdamState adam;
  if (!c.resume.empty()) {
    const auto ck = trainer::load_checkpoint(c.resume);
    if (!(ck.vocab == vocab) || ck.languages != langs)
      throw UsageError("resume checkpoint '" + c.resume + "' was trained on a different vocabulary or language list");
    ck.restore(m);
    adam = ck.adam;
    log.line("resumed from " + c.resume + " at update " + std::to_string(adam.step));
  }
  if (!c.transfer_from.empty()) {
    const auto n = trainer::transfer_encoder(trainer::load_checkpoint(c.transfer_from), m);
    log.line("transferred " + std::to_string(n) + " encoder tensors from " + c.transfer_from);
  }
  log.line("model: " + nlohmann::json(mcfg).dump() + ", " + std::to_string(m.parameters().parameter_count()) + " weights");

  trainer::TrainOptions opt;
  opt.schedule = {c.lr_init, c.lr_max, c.warmup};
  opt.accumulation = c.accumulation;
  opt.max_per_lang = c.max_per_lang;
  opt.seed = c.seed;
  if (c.epochs) opt.max_epochs = c.epochs;
  trainer::Trainer tr(m, corpus, opt, adam);
  auto save = [&] {
    trainer::save_checkpoint(c.checkpoint,
                             trainer::Checkpoint::capture(m, vocab, langs, opt.schedule, tr.adam()));
  };
  if (auto parent = std::filesystem::path(c.checkpoint).parent_path(); !parent.empty())
    std::filesystem::create_directories(parent);

  const auto start = std::chrono::steady_clock::now();
  std::map<std::size_t, std::size_t> groups;
  double window_loss = 0.0;
  std::size_t window_n = 0;
  while (tr.adam().step < c.steps) {
    const auto r = tr.step();
    if (!r) {
      log.line("data exhausted after " + std::to_string(tr.adam().step) + " updates");
      break;
    }
    for (const auto& [l, n] : tr.last_groups()) groups[l] += n;
    window_loss += r->loss;
    ++window_n;
    if (r->step % c.log_every == 0 || r->step == 1) {
      std::string g;
      for (const auto& [l, n] : groups) g += (g.empty() ? "" : ",") + langs[l] + ":" + std::to_string(n);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log.line("step " + std::to_string(r->step) + " lr " + detail::fixed(r->lr, 6) + " loss " +
               detail::fixed(window_loss / static_cast<double>(window_n), 6) + " groups " + g + " elapsed " +
               detail::fixed(secs, 1) + "s");
      groups.clear();
      window_loss = 0.0;
      window_n = 0;
    }
    if (c.checkpoint_every && r->step % c.checkpoint_every == 0) save();
  }
  if (tr.skipped_batches()) log.line("skipped " + std::to_string(tr.skipped_batches()) + " single-utterance batches");
  save();
  log.line("saved checkpoint " + c.checkpoint + " after " + std::to_string(tr.adam().step) + " updates");
  return 0;
}

inline int cmd_translate(const RunConfig& c, Logger& log) {
  const auto ck = trainer::load_checkpoint(c.checkpoint);
  const auto m = ck.instantiate();
  std::vector<std::string> langs = c.languages;
  if (langs.empty())
    for (const auto& l : ck.languages)
      if (l != audio::kSourceLanguage || ck.languages.size() == 1) langs.push_back(l);
  for (const auto& l : langs)
    if (std::find(ck.languages.begin(), ck.languages.end(), l) == ck.languages.end())
      throw UsageError("checkpoint was not trained on language '" + l + "'");
  const auto rows = detail::read_rows(c, detail::manifest_languages(c.manifest));
  const audio::FeatureStore store(c.features);

  std::map<std::string, std::vector<double>> feats;
  std::map<std::string, std::size_t> frames;
  std::vector<const audio::ManifestEntry*> selected;
  for (const auto& r : rows) {
    if (r.split != c.split || std::find(langs.begin(), langs.end(), r.lang) == langs.end()) continue;
    selected.push_back(&r);
    if (feats.count(r.audio_path)) continue;
    auto fs = audio::normalize(store.load(r.audio_path));
    frames[r.audio_path] = fs.frames;
    feats[r.audio_path] = std::move(fs.data);
  }
  if (selected.empty()) throw UsageError("no '" + c.split + "' rows to translate");
  std::vector<eval::DecodeRequest> reqs;
  for (const auto* r : selected)
    reqs.push_back({&feats.at(r->audio_path), frames.at(r->audio_path),
                    static_cast<std::int64_t>(trainer::language_index(ck.languages, r->lang))});
  log.line("translating " + std::to_string(reqs.size()) + " utterances, beam " + std::to_string(c.beam) + ", " +
           std::to_string(c.workers) + " workers");
  const auto start = std::chrono::steady_clock::now();
  const auto hyps = eval::decode_all(*m, reqs, ck.vocab, {c.beam, c.length_alpha, c.max_len}, c.workers);
  const auto alphabets = detail::reference_alphabets(c, rows);
  std::vector<eval::HypothesisRow> out;
  std::size_t truncated = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto d = eval::detect_language(hyps[i].text, alphabets);
    out.push_back({selected[i]->audio_path, selected[i]->lang, d ? alphabets[*d].lang : "-", hyps[i].logprob,
                   hyps[i].text});
    truncated += hyps[i].truncated;
  }
  std::ostringstream tsv;
  eval::write_hypotheses(tsv, out);
  detail::write_text_atomically(c.hypotheses, tsv.str());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log.line("wrote " + std::to_string(out.size()) + " hypotheses to " + c.hypotheses + " (" +
           std::to_string(truncated) + " truncated) in " + detail::fixed(secs, 1) + "s");
  return 0;
}

namespace detail {

struct Scored {
  std::vector<eval::HypothesisRow> hyps;
  std::vector<audio::ManifestEntry> rows;
  std::vector<eval::Alphabet> alphabets;
};

inline Scored load_scored(const RunConfig& c) {
  Scored s{eval::read_hypotheses(c.hypotheses), {}, {}};
  s.rows = read_rows(c, manifest_languages(c.manifest));
  s.alphabets = reference_alphabets(c, s.rows);
  if (s.hyps.empty()) throw UsageError("hypothesis file '" + c.hypotheses + "' is empty");
  return s;
}

}  // namespace detail

inline int cmd_evaluate(const RunConfig& c, Logger& log, std::ostream& out) {
  const auto s = detail::load_scored(c);
  const auto metrics = eval::score_hypotheses(s.hyps, s.rows, s.alphabets);
  const auto j = eval::metrics_json(metrics);
  detail::write_text_atomically(c.output, j.dump(2) + "\n");
  for (const auto& [lang, v] : metrics)
    out << lang << "\tbleu " << detail::fixed(v.bleu, 2) << "\ttoken_accuracy " << detail::fixed(v.token_accuracy)
        << "\tlanguage_accuracy " << detail::fixed(v.language_accuracy) << "\tn " << v.utterances << '\n';
  log.line("wrote metrics to " + c.output);
  return 0;
}

inline int cmd_audit(const RunConfig& c, Logger& log, std::ostream& out) {
  const auto s = detail::load_scored(c);
  std::vector<eval::AuditItem> items;
  for (const auto& h : s.hyps) items.push_back({h.text, h.requested});
  const auto acc = eval::language_audit(items, s.alphabets);
  nlohmann::json j = {{"language_accuracy", acc}};
  detail::write_text_atomically(c.output, j.dump(2) + "\n");
  for (const auto& [lang, v] : acc) out << lang << "\tlanguage_accuracy " << detail::fixed(v) << '\n';
  log.line("wrote audit to " + c.output);
  return 0;
}

inline int cmd_gradcheck(const RunConfig& c, Logger& log, std::ostream& out) {
  const double tol = 1e-4;
  const auto start = std::chrono::steady_clock::now();
  const auto ops = model::op_gradient_suite(c.seed);
  for (const auto& e : ops) out << "op\t" << e.name << '\t' << e.error << '\n';
  auto mcfg = detail::model_config(c, 12, 3);
  const auto params = model::model_gradient_suite(mcfg, c.gradcheck_frames, c.gradcheck_entries, c.seed);
  for (const auto& e : params) out << "param\t" << e.name << '\t' << e.error << '\n';
  const double wo = model::worst_error(ops), wp = model::worst_error(params);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out << "max op error " << wo << "\nmax model error " << wp << "\n";
  log.line("gradcheck finished in " + detail::fixed(secs, 1) + "s");
  if (wo < tol && wp < tol) return 0;
  log.line("gradcheck failed: maximum relative error exceeds " + detail::fixed(tol, 6));
  return 2;
}

/// Parses flags into a resolved configuration. Flags win over the config file.
inline RunConfig parse_args(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
                            int& exit_code) {
  exit_code = -1;
  CLI::App app{"Multilingual speech translation toolkit", "mlst"};
  app.require_subcommand(1, 1);
  std::vector<std::function<void(nlohmann::json&)>> overrides;
  std::map<CLI::App*, std::string> config_path;

  auto opt = [&]<class T>(CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help,
                          T*) {
    auto v = std::make_shared<T>();
    auto* o = sub->add_option(flag, *v, help);
    if constexpr (std::is_same_v<T, std::vector<std::string>>) o->delimiter(',');
    overrides.push_back([o, v, key](nlohmann::json& j) {
      if (o->count()) j[key] = *v;
    });
    return o;
  };
  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, bool value,
                  const std::string& help) {
    auto* o = sub->add_flag(name, help);
    overrides.push_back([o, key, value](nlohmann::json& j) {
      if (o->count()) j[key] = value;
    });
  };
  using S = std::string;
  using U = std::uint64_t;
  using Z = std::size_t;
  using D = double;
  using L = std::vector<std::string>;

  const std::map<std::string, std::string> help{
      {"extract", "compute log-MEL features for every audio file of a manifest"},
      {"synth", "generate the synthetic multilingual dataset"},
      {"train", "train a multilingual translation model"},
      {"asr-pretrain", "train on source-language transcripts only"},
      {"translate", "decode a split to a hypothesis file"},
      {"evaluate", "score hypotheses (BLEU, token and language accuracy)"},
      {"audit", "report the fraction of outputs in the requested language"},
      {"gradcheck", "finite-difference check of every op and the model"}};
  for (const auto& name : commands()) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    sub->add_option("--config", config_path[sub], "JSON config file; flags override it");
    opt(sub, "--data-dir", "data_dir", "default directory for inputs and outputs (env MLST_DATA_DIR)", (S*)nullptr);
    opt(sub, "--seed", "seed", "random seed", (U*)nullptr);
    opt(sub, "--log", "log", "also write the log to this file", (S*)nullptr);
    opt(sub, "--workers", "workers", "worker threads", (Z*)nullptr);
    const bool trains = name == "train" || name == "asr-pretrain";
    if (name != "gradcheck" && name != "synth") {
      opt(sub, "--manifest", "manifest", "manifest TSV", (S*)nullptr);
      opt(sub, "--split", "split", "train, dev or test", (S*)nullptr);
    }
    if (name != "gradcheck") opt(sub, "--languages", "languages", "comma-separated target languages", (L*)nullptr);
    if (name == "extract" || trains || name == "translate")
      opt(sub, "--features", "features", "feature store", (S*)nullptr);
    if (name == "extract") opt(sub, "--audio-root", "audio_root", "directory audio paths are relative to", (S*)nullptr);
    if (trains || name == "gradcheck") {
      opt(sub, "--d-model", "d_model", "model width", (Z*)nullptr);
      opt(sub, "--ff-hidden", "ff_hidden", "feed-forward width (0: 2 x d-model)", (Z*)nullptr);
      opt(sub, "--encoder-layers", "encoder_layers", "encoder layers", (Z*)nullptr);
      opt(sub, "--decoder-layers", "decoder_layers", "decoder layers", (Z*)nullptr);
      opt(sub, "--heads", "heads", "attention heads", (Z*)nullptr);
      opt(sub, "--dropout", "dropout", "dropout rate", (D*)nullptr);
      flag(sub, "--no-penalty", "penalty", false, "disable the distance penalty");
      opt(sub, "--forcing", "forcing", "none, concat or merge", (S*)nullptr);
      opt(sub, "--site", "site", "pre, post, final or decoder", (S*)nullptr);
    }
    if (trains) {
      if (name == "train") {
        flag(sub, "--mix-asr", "mix_asr", true, "add source-language transcription rows");
        opt(sub, "--transfer-from", "transfer_from", "initialise the encoder from this checkpoint", (S*)nullptr);
      }
      opt(sub, "--resume", "resume", "continue from this checkpoint", (S*)nullptr);
      opt(sub, "--lr-init", "lr_init", "learning rate at update 0", (D*)nullptr);
      opt(sub, "--lr-max", "lr_max", "peak learning rate", (D*)nullptr);
      opt(sub, "--warmup", "warmup", "warm-up updates", (U*)nullptr);
      opt(sub, "--steps", "steps", "stop after this many updates", (U*)nullptr);
      opt(sub, "--epochs", "epochs", "stop after this many epochs per language (0: unlimited)", (Z*)nullptr);
      opt(sub, "--accumulation", "accumulation", "micro-batches per update", (Z*)nullptr);
      opt(sub, "--max-per-lang", "max_per_lang", "utterances per language in a micro-batch", (Z*)nullptr);
      opt(sub, "--checkpoint-every", "checkpoint_every", "also save every N updates", (U*)nullptr);
      opt(sub, "--log-every", "log_every", "log every N updates", (U*)nullptr);
    }
    if (trains || name == "translate") opt(sub, "--checkpoint", "checkpoint", "checkpoint path", (S*)nullptr);
    if (name == "translate" || name == "evaluate" || name == "audit")
      opt(sub, "--hypotheses", "hypotheses", "hypothesis TSV", (S*)nullptr);
    if (name == "translate") {
      opt(sub, "--beam", "beam", "beam size (1: greedy)", (Z*)nullptr);
      opt(sub, "--length-alpha", "length_alpha", "length normalisation exponent", (D*)nullptr);
      opt(sub, "--max-len", "max_len", "maximum output length", (Z*)nullptr);
    }
    if (name == "evaluate" || name == "audit" || name == "synth")
      opt(sub, "--output", "output", name == "synth" ? "output directory" : "report path", (S*)nullptr);
    if (name == "synth") {
      opt(sub, "--utterances", "utterances", "utterances (one row per language each)", (Z*)nullptr);
      opt(sub, "--noise", "noise", "Gaussian noise standard deviation", (D*)nullptr);
    }
    if (name == "gradcheck") {
      opt(sub, "--frames", "gradcheck_frames", "input frames", (Z*)nullptr);
      opt(sub, "--entries", "gradcheck_entries", "entries probed per tensor (0: all)", (Z*)nullptr);
    }
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    exit_code = code == 0 ? 0 : 1;
    return {};
  }
  CLI::App* sub = app.get_subcommands().front();
  RunConfig c;
  c.command = sub->get_name();
  nlohmann::json merged = c;
  if (!config_path[sub].empty()) {
    const auto file = read_config_file(config_path[sub]);
    if (file.is_object() && file.contains("command") && file["command"] != c.command)
      throw UsageError("config file '" + config_path[sub] + "' is for command " + file["command"].dump());
    RunConfig probe;
    apply_json(probe, file, config_path[sub]);
    merged.update(file);
  }
  for (auto& o : overrides) o(merged);
  RunConfig final_cfg;
  apply_json(final_cfg, merged, "configuration");
  final_cfg.command = c.command;
  return resolve(final_cfg);
}

/// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  RunConfig c;
  std::unique_ptr<Logger> log;
  try {
    int code = -1;
    c = parse_args(args, out, err, code);
    if (code >= 0) return code;
    log = std::make_unique<Logger>(err, c.log);
    log->line("config " + nlohmann::json(c).dump());
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  try {
    if (c.command == "synth") return cmd_synth(c, *log);
    if (c.command == "extract") return cmd_extract(c, *log);
    if (c.command == "train") return cmd_train(c, *log, false);
    if (c.command == "asr-pretrain") return cmd_train(c, *log, true);
    if (c.command == "translate") return cmd_translate(c, *log);
    if (c.command == "evaluate") return cmd_evaluate(c, *log, out);
    if (c.command == "audit") return cmd_audit(c, *log, out);
    if (c.command == "gradcheck") return cmd_gradcheck(c, *log, out);
  } catch (const UsageError& e) {
    log->line("error: " + std::string(e.what()));
    return 1;
  } catch (const model::ConfigError& e) {
    log->line("error: " + std::string(e.what()));
    return 1;
  } catch (const std::exception& e) {
    log->line("error: " + std::string(e.what()));
    return 2;
  }
  return 1;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  return run(std::vector<std::string>(argv + 1, argv + argc), out, err);
}

}  // namespace mlst::cli
