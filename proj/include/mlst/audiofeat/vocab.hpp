#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace mlst::text {

/// Decodes UTF-8 into code points; malformed sequences throw.
inline std::vector<char32_t> utf8_decode(const std::string& s) {
  std::vector<char32_t> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    char32_t cp = 0;
    if (c < 0x80) { cp = c; len = 1; }
    else if ((c >> 5) == 0x6) { cp = c & 0x1f; len = 2; }
    else if ((c >> 4) == 0xe) { cp = c & 0x0f; len = 3; }
    else if ((c >> 3) == 0x1e) { cp = c & 0x07; len = 4; }
    else throw std::invalid_argument("invalid UTF-8 lead byte");
    if (i + len > s.size()) throw std::invalid_argument("truncated UTF-8 sequence");
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc >> 6) != 0x2) throw std::invalid_argument("invalid UTF-8 continuation byte");
      cp = (cp << 6) | (cc & 0x3f);
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

inline std::string utf8_encode(char32_t cp) {
  std::string s;
  if (cp < 0x80) {
    s.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    s.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    s.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    s.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    s.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
  return s;
}

inline std::string utf8_encode(const std::vector<char32_t>& cps) {
  std::string s;
  for (char32_t c : cps) s += utf8_encode(c);
  return s;
}

/// Character vocabulary. Ids 0..3 are reserved; remaining ids follow code point order.
class Vocabulary {
 public:
  static constexpr std::int64_t kPad = 0;
  static constexpr std::int64_t kBos = 1;
  static constexpr std::int64_t kEos = 2;
  static constexpr std::int64_t kUnk = 3;
  static constexpr std::int64_t kReserved = 4;

  Vocabulary() = default;

  explicit Vocabulary(const std::set<char32_t>& chars) : chars_(chars.begin(), chars.end()) {
    for (std::size_t i = 0; i < chars_.size(); ++i) ids_[chars_[i]] = kReserved + static_cast<std::int64_t>(i);
  }

  static Vocabulary from_texts(const std::vector<std::string>& texts) {
    std::set<char32_t> chars;
    for (const auto& t : texts)
      for (char32_t c : utf8_decode(t)) chars.insert(c);
    return Vocabulary(chars);
  }

  std::size_t size() const { return chars_.size() + kReserved; }
  const std::vector<char32_t>& characters() const { return chars_; }

  std::int64_t id(char32_t c) const {
    auto it = ids_.find(c);
    return it == ids_.end() ? kUnk : it->second;
  }

  std::vector<std::int64_t> encode(const std::string& text) const {
    std::vector<std::int64_t> out;
    for (char32_t c : utf8_decode(text)) out.push_back(id(c));
    return out;
  }

  /// Reserved ids are dropped; unk renders as U+FFFD.
  std::string decode(const std::vector<std::int64_t>& ids) const {
    std::string s;
    for (auto i : ids) {
      if (i == kUnk) s += utf8_encode(char32_t{0xfffd});
      else if (i >= kReserved && static_cast<std::size_t>(i - kReserved) < chars_.size())
        s += utf8_encode(chars_[static_cast<std::size_t>(i - kReserved)]);
    }
    return s;
  }

  /// Canonical text form: one decimal code point per line, in id order.
  std::string serialize() const {
    std::string s;
    for (char32_t c : chars_) s += std::to_string(static_cast<std::uint32_t>(c)) + "\n";
    return s;
  }

  bool operator==(const Vocabulary& o) const { return chars_ == o.chars_; }

 private:
  std::vector<char32_t> chars_;
  std::map<char32_t, std::int64_t> ids_;
};

}  // namespace mlst::text
