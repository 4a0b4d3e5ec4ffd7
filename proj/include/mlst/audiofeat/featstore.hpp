#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mlst/audiofeat/mel.hpp"

namespace mlst::audio {

/// Feature archive: a flat binary file of records (little-endian u32 T,
/// u32 F, then T·F float32) plus a sidecar TSV index "id<TAB>offset<TAB>T<TAB>F".
class FeatureWriter {
 public:
  explicit FeatureWriter(const std::string& path) : path_(path), data_(path, std::ios::binary), index_(path + ".idx") {
    if (!data_ || !index_) throw FormatError("cannot create feature store '" + path + "'");
  }

  void write(const FeatureSequence& fs) {
    if (fs.id.empty() || fs.id.find_first_of("\t\n") != std::string::npos)
      throw FormatError("feature id must be non-empty and free of tabs/newlines");
    std::string rec;
    rec.reserve(8 + fs.data.size() * 4);
    put_u32(rec, static_cast<std::uint32_t>(fs.frames));
    put_u32(rec, static_cast<std::uint32_t>(fs.bins));
    for (double v : fs.data) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(rec, bits);
    }
    index_ << fs.id << '\t' << offset_ << '\t' << fs.frames << '\t' << fs.bins << '\n';
    data_.write(rec.data(), static_cast<std::streamsize>(rec.size()));
    offset_ += rec.size();
  }

 private:
  static void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  std::string path_;
  std::ofstream data_;
  std::ofstream index_;
  std::uint64_t offset_ = 0;
};

class FeatureStore {
 public:
  explicit FeatureStore(const std::string& path) : path_(path) {
    std::ifstream idx(path + ".idx");
    if (!idx) throw FormatError("cannot open feature index '" + path + ".idx'");
    std::ifstream data(path, std::ios::binary);
    if (!data) throw FormatError("cannot open feature store '" + path + "'");
    bytes_.assign(std::istreambuf_iterator<char>(data), std::istreambuf_iterator<char>());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(idx, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string id;
      Entry e;
      if (!std::getline(ls, id, '\t') || !(ls >> e.offset >> e.frames >> e.bins))
        throw FormatError(path + ".idx:" + std::to_string(lineno) + ": malformed index row");
      if (e.offset + 8 + 4 * e.frames * e.bins > bytes_.size())
        throw FormatError(path + ".idx:" + std::to_string(lineno) + ": record points past end of store");
      if (!entries_.emplace(id, e).second)
        throw FormatError(path + ".idx:" + std::to_string(lineno) + ": duplicate id '" + id + "'");
      order_.push_back(id);
    }
  }

  bool contains(const std::string& id) const { return entries_.count(id) != 0; }
  const std::vector<std::string>& ids() const { return order_; }
  std::size_t size() const { return order_.size(); }

  FeatureSequence load(const std::string& id) const {
    auto it = entries_.find(id);
    if (it == entries_.end()) throw FormatError("feature store '" + path_ + "' has no entry '" + id + "'");
    const Entry& e = it->second;
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + e.offset;
    const std::uint32_t T = detail::le32(p), F = detail::le32(p + 4);
    if (T != e.frames || F != e.bins)
      throw FormatError("feature store '" + path_ + "': header of '" + id + "' disagrees with the index");
    FeatureSequence fs{id, T, F, std::vector<double>(std::size_t(T) * F)};
    for (std::size_t i = 0; i < fs.data.size(); ++i) {
      const std::uint32_t bits = detail::le32(p + 8 + 4 * i);
      float f;
      std::memcpy(&f, &bits, 4);
      fs.data[i] = f;
    }
    return fs;
  }

 private:
  struct Entry {
    std::uint64_t offset = 0;
    std::size_t frames = 0;
    std::size_t bins = 0;
  };
  std::string path_;
  std::string bytes_;
  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
};

}  // namespace mlst::audio
