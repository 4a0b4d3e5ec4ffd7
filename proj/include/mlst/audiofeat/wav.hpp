#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlst::audio {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kSampleRate = 16000;

namespace detail {
inline std::uint32_t le32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t le16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }
inline void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}
}  // namespace detail

/// Decodes a 16-bit PCM mono 16 kHz RIFF/WAVE byte buffer into samples in [-1, 1).
inline std::vector<double> decode_wav(const std::string& bytes, const std::string& what = "wav") {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12 || std::memcmp(p, "RIFF", 4) != 0 || std::memcmp(p + 8, "WAVE", 4) != 0)
    throw FormatError(what + ": not a RIFF/WAVE file");
  std::size_t pos = 12;
  bool have_fmt = false;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = detail::le32(p + pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw FormatError(what + ": truncated chunk");
    if (std::memcmp(p + pos, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError(what + ": short fmt chunk");
      const std::uint16_t format = detail::le16(p + body);
      const std::uint16_t channels = detail::le16(p + body + 2);
      const std::uint32_t rate = detail::le32(p + body + 4);
      const std::uint16_t bits = detail::le16(p + body + 14);
      if (format != 1) throw FormatError(what + ": only PCM encoding is supported");
      if (channels != 1) throw FormatError(what + ": expected mono, got " + std::to_string(channels) + " channels");
      if (rate != kSampleRate)
        throw FormatError(what + ": expected 16000 Hz, got " + std::to_string(rate) + " Hz");
      if (bits != 16) throw FormatError(what + ": expected 16-bit samples, got " + std::to_string(bits));
      have_fmt = true;
    } else if (std::memcmp(p + pos, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(what + ": data chunk before fmt chunk");
      std::vector<double> out(size / 2);
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = static_cast<std::int16_t>(detail::le16(p + body + 2 * i)) / 32768.0;
      return out;
    }
    pos = body + size + (size & 1);
  }
  throw FormatError(what + ": no data chunk");
}

inline std::vector<double> read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open audio file '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_wav(bytes, path);
}

/// 16-bit PCM WAV encoding; samples are clipped to [-1, 1].
inline std::string encode_wav(const std::vector<double>& samples, std::uint32_t rate = kSampleRate,
                              std::uint16_t channels = 1) {
  std::string s = "RIFF";
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  detail::put32(s, 36 + data_bytes);
  s += "WAVEfmt ";
  detail::put32(s, 16);
  detail::put16(s, 1);
  detail::put16(s, channels);
  detail::put32(s, rate);
  detail::put32(s, rate * channels * 2);
  detail::put16(s, static_cast<std::uint16_t>(channels * 2));
  detail::put16(s, 16);
  s += "data";
  detail::put32(s, data_bytes);
  for (double v : samples) {
    const double c = std::max(-1.0, std::min(1.0, v));
    const auto q = static_cast<std::int16_t>(std::lround(c * 32767.0));
    detail::put16(s, static_cast<std::uint16_t>(q));
  }
  return s;
}

inline void write_wav(const std::string& path, const std::vector<double>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write '" + path + "'");
  const std::string bytes = encode_wav(samples);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace mlst::audio
