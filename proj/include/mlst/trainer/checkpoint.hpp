#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mlst/audiofeat/vocab.hpp"
#include "mlst/model/speech_transformer.hpp"
#include "mlst/numerics/adam.hpp"
#include "mlst/trainer/schedule.hpp"

namespace mlst::trainer {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in host order");

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kCheckpointMagic = "MLSTCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> values;
  bool operator==(const NamedTensor&) const = default;
};

/// Everything needed to rebuild a model and resume its optimizer.
///
/// File layout: "MLSTCKPT", u32 version, u64 header length, JSON header
/// (config, vocabulary, languages, schedule, Adam scalars, tensor index),
/// float64 payloads, then a u64 FNV-1a checksum of all preceding bytes.
struct Checkpoint {
  model::ModelConfig config;
  text::Vocabulary vocab;
  std::vector<std::string> languages;
  LRSchedule schedule;
  AdamState adam;
  std::vector<NamedTensor> parameters;
  std::vector<NamedTensor> buffers;

  static Checkpoint capture(const model::SpeechTransformer& m, const text::Vocabulary& vocab,
                            const std::vector<std::string>& languages, const LRSchedule& schedule,
                            const AdamState& adam) {
    Checkpoint c{m.config(), vocab, languages, schedule, adam, {}, {}};
    for (const auto& p : m.parameters().parameters())
      c.parameters.push_back({p.name, p.tensor.shape(), {p.tensor.values().begin(), p.tensor.values().end()}});
    for (const auto& p : m.parameters().buffers())
      c.buffers.push_back({p.name, p.tensor.shape(), {p.tensor.values().begin(), p.tensor.values().end()}});
    return c;
  }

  /// Copies every tensor into `m`. The model's config must equal the stored one;
  /// nothing is written unless every name and shape matches.
  void restore(model::SpeechTransformer& m) const {
    if (!(m.config() == config)) {
      nlohmann::json have = m.config(), want = config;
      throw CheckpointError("checkpoint config does not match the model: checkpoint " + want.dump() + ", model " +
                            have.dump());
    }
    auto check = [](const std::deque<Parameter>& live, const std::vector<NamedTensor>& stored, const char* kind) {
      if (live.size() != stored.size())
        throw CheckpointError(std::string("checkpoint has ") + std::to_string(stored.size()) + " " + kind +
                              "s, model has " + std::to_string(live.size()));
      for (std::size_t i = 0; i < live.size(); ++i)
        if (live[i].name != stored[i].name || live[i].tensor.shape() != stored[i].shape)
          throw CheckpointError(std::string(kind) + " '" + stored[i].name + "' does not match the model");
    };
    check(m.parameters().parameters(), parameters, "parameter");
    check(m.parameters().buffers(), buffers, "buffer");
    auto copy = [](std::deque<Parameter>& live, const std::vector<NamedTensor>& stored) {
      for (std::size_t i = 0; i < live.size(); ++i) {
        auto dst = live[i].tensor.mutable_values();
        std::copy(stored[i].values.begin(), stored[i].values.end(), dst.begin());
      }
    };
    copy(m.parameters().parameters(), parameters);
    copy(m.parameters().buffers(), buffers);
  }

  std::unique_ptr<model::SpeechTransformer> instantiate() const {
    auto m = std::make_unique<model::SpeechTransformer>(config);
    restore(*m);
    return m;
  }

  const NamedTensor* find(const std::string& name) const {
    for (const auto* set : {&parameters, &buffers})
      for (const auto& t : *set)
        if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get(std::string_view in, std::size_t at) {
  T v;
  std::memcpy(&v, in.data() + at, sizeof(T));
  return v;
}

inline nlohmann::json shape_json(const Shape& s) { return nlohmann::json(std::vector<std::size_t>(s.begin(), s.end())); }

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  using nlohmann::json;
  json tensors = json::array();
  std::string payload;
  auto emit = [&](const std::string& name, const std::string& kind, const Shape& shape,
                  const std::vector<double>& values) {
    tensors.push_back({{"name", name},
                       {"kind", kind},
                       {"shape", detail::shape_json(shape)},
                       {"offset", payload.size()},
                       {"count", values.size()}});
    for (double v : values) detail::put(payload, v);
  };
  for (const auto& t : c.parameters) emit(t.name, "parameter", t.shape, t.values);
  for (const auto& t : c.buffers) emit(t.name, "buffer", t.shape, t.values);
  for (const auto& [name, m] : c.adam.first_moment) emit(name, "adam.m", Shape{m.size()}, m);
  for (const auto& [name, v] : c.adam.second_moment) emit(name, "adam.v", Shape{v.size()}, v);

  std::vector<std::uint32_t> vocab;
  for (char32_t ch : c.vocab.characters()) vocab.push_back(static_cast<std::uint32_t>(ch));
  const json header = {
      {"config", c.config},
      {"vocab", vocab},
      {"languages", c.languages},
      {"schedule", {{"lr_init", c.schedule.lr_init}, {"lr_max", c.schedule.lr_max}, {"warmup", c.schedule.warmup}}},
      {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}, {"step", c.adam.step}}},
      {"tensors", tensors},
      {"payload_bytes", payload.size()}};
  const std::string h = header.dump();

  std::string out(kCheckpointMagic);
  detail::put(out, kCheckpointVersion);
  detail::put(out, static_cast<std::uint64_t>(h.size()));
  out += h;
  out += payload;
  detail::put(out, detail::fnv1a(out));
  return out;
}

inline Checkpoint parse_checkpoint(std::string_view bytes, const std::string& name = "checkpoint") {
  using nlohmann::json;
  auto fail = [&](const std::string& why) { return CheckpointError(name + ": " + why); };
  const std::size_t fixed = kCheckpointMagic.size() + 4 + 8;
  if (bytes.size() < fixed + 8) throw fail("file too short to be a checkpoint");
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) throw fail("not a checkpoint (bad magic)");
  const auto version = detail::get<std::uint32_t>(bytes, kCheckpointMagic.size());
  if (version != kCheckpointVersion)
    throw fail("unsupported checkpoint version " + std::to_string(version) + " (expected " +
               std::to_string(kCheckpointVersion) + ")");
  const auto header_len = detail::get<std::uint64_t>(bytes, kCheckpointMagic.size() + 4);
  if (header_len > bytes.size() - fixed - 8) throw fail("truncated header");
  const std::size_t body_end = bytes.size() - 8;
  if (detail::fnv1a(bytes.substr(0, body_end)) != detail::get<std::uint64_t>(bytes, body_end))
    throw fail("checksum mismatch (file is corrupt or truncated)");

  Checkpoint c;
  try {
    const json h = json::parse(bytes.substr(fixed, header_len));
    const std::string_view payload = bytes.substr(fixed + header_len, body_end - fixed - header_len);
    if (h.at("payload_bytes").get<std::size_t>() != payload.size()) throw fail("payload size disagrees with header");
    c.config = h.at("config").get<model::ModelConfig>();
    c.config.validate();
    std::set<char32_t> chars;
    for (auto cp : h.at("vocab").get<std::vector<std::uint32_t>>()) chars.insert(static_cast<char32_t>(cp));
    c.vocab = text::Vocabulary(chars);
    if (c.vocab.size() != c.config.vocab_size) throw fail("vocabulary size disagrees with the model config");
    c.languages = h.at("languages").get<std::vector<std::string>>();
    const auto& s = h.at("schedule");
    c.schedule = {s.at("lr_init").get<double>(), s.at("lr_max").get<double>(), s.at("warmup").get<std::uint64_t>()};
    const auto& a = h.at("adam");
    c.adam.beta1 = a.at("beta1").get<double>();
    c.adam.beta2 = a.at("beta2").get<double>();
    c.adam.eps = a.at("eps").get<double>();
    c.adam.step = a.at("step").get<std::uint64_t>();
    for (const auto& t : h.at("tensors")) {
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto count = t.at("count").get<std::size_t>();
      if (count != shape_numel(Shape(shape.begin(), shape.end())) || offset % 8 != 0 ||
          offset > payload.size() || count > (payload.size() - offset) / 8)
        throw fail("tensor '" + t.at("name").get<std::string>() + "' has an inconsistent index entry");
      std::vector<double> values(count);
      std::memcpy(values.data(), payload.data() + offset, count * 8);
      const std::string tname = t.at("name").get<std::string>();
      const std::string kind = t.at("kind").get<std::string>();
      NamedTensor nt{tname, Shape(shape.begin(), shape.end()), std::move(values)};
      if (kind == "parameter") c.parameters.push_back(std::move(nt));
      else if (kind == "buffer") c.buffers.push_back(std::move(nt));
      else if (kind == "adam.m") c.adam.first_moment[tname] = std::move(nt.values);
      else if (kind == "adam.v") c.adam.second_moment[tname] = std::move(nt.values);
      else throw fail("unknown tensor kind '" + kind + "'");
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw fail(std::string("malformed header: ") + e.what());
  }
  return c;
}

/// Writes atomically: a temporary sibling is renamed over `path`.
inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  const std::string bytes = serialize_checkpoint(c);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("short write to checkpoint '" + path + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes, path);
}

}  // namespace mlst::trainer
