#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlst/numerics/layers.hpp"

namespace mlst::forcing {

enum class Mode { kNone, kConcat, kMerge };
enum class Site { kPre, kPost, kFinal, kDecoder };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::kNone: return "none";
    case Mode::kConcat: return "concat";
    case Mode::kMerge: return "merge";
  }
  return "?";
}

inline std::string to_string(Site s) {
  switch (s) {
    case Site::kPre: return "pre";
    case Site::kPost: return "post";
    case Site::kFinal: return "final";
    case Site::kDecoder: return "decoder";
  }
  return "?";
}

inline std::ostream& operator<<(std::ostream& os, Mode m) { return os << to_string(m); }
inline std::ostream& operator<<(std::ostream& os, Site s) { return os << to_string(s); }

inline Mode parse_mode(const std::string& s) {
  if (s == "none") return Mode::kNone;
  if (s == "concat") return Mode::kConcat;
  if (s == "merge") return Mode::kMerge;
  throw std::invalid_argument("unknown forcing mode '" + s + "' (expected none, concat or merge)");
}

inline Site parse_site(const std::string& s) {
  if (s == "pre") return Site::kPre;
  if (s == "post") return Site::kPost;
  if (s == "final") return Site::kFinal;
  if (s == "decoder") return Site::kDecoder;
  throw std::invalid_argument("unknown forcing site '" + s + "' (expected pre, post, final or decoder)");
}

class ForcingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
inline void check_width(const Tensor& x, const Tensor& l, const char* op) {
  if (x.rank() < 2) throw DimensionError(std::string(op) + ": representation must be (…×)T×W, got " + shape_str(x.shape()));
  if (l.dim(-1) != x.dim(-1))
    throw DimensionError(std::string(op) + ": embedding width " + std::to_string(l.dim(-1)) +
                         " does not match representation width " + std::to_string(x.dim(-1)));
}

/// Lifts l (W, or B×W for a B×T×W batch) to a shape that broadcasts over time.
inline Tensor as_time_row(const Tensor& x, const Tensor& l) {
  Shape s(x.shape().begin(), x.shape().end());
  s[s.size() - 2] = 1;
  if (l.numel() == x.dim(-1)) {
    Shape row(s.size(), 1);
    row.back() = x.dim(-1);
    Tensor r = reshape(l, row);
    if (shape_numel(row) == shape_numel(s)) return r;
    return add(r, Tensor(s, 0.0));  // materialise across leading axes
  }
  if (l.numel() != shape_numel(s))
    throw DimensionError("forcing: embedding batch " + shape_str(l.shape()) + " does not match representation " +
                         shape_str(x.shape()));
  return reshape(l, s);
}
}  // namespace detail

/// Prepends the language vector as time step 0: T×W → (T+1)×W (batched over leading axes).
inline Tensor apply_concat(const Tensor& x, const Tensor& l) {
  detail::check_width(x, l, "apply_concat");
  return concat({detail::as_time_row(x, l), x}, -2);
}

/// Adds the language vector to every time step: T×W → T×W.
inline Tensor apply_merge(const Tensor& x, const Tensor& l) {
  detail::check_width(x, l, "apply_merge");
  if (l.numel() == x.dim(-1)) {
    Shape row(x.rank(), 1);
    row.back() = x.dim(-1);
    return add(x, reshape(l, row));
  }
  return add(x, detail::as_time_row(x, l));
}

/// Learnable per-language vectors for one injection site.
class LanguageEmbeddingTable {
 public:
  LanguageEmbeddingTable() = default;
  LanguageEmbeddingTable(ParameterSet& ps, const std::string& name, std::size_t languages, std::size_t width,
                         double sigma, Rng& rng)
      : table_(&ps.add_parameter(name, normal_tensor({languages, width}, sigma, rng))) {}

  bool defined() const { return table_ != nullptr; }
  std::size_t languages() const { return table_->dim(0); }
  std::size_t width() const { return table_->dim(1); }
  Tensor& table() { return *table_; }
  const Tensor& table() const { return *table_; }

  /// Rows for a batch of language ids: B×W.
  Tensor lookup(const std::vector<std::int64_t>& langs) const {
    if (langs.empty()) throw ForcingError("language embedding lookup: no language ids given");
    for (auto id : langs)
      if (id < 0 || static_cast<std::size_t>(id) >= languages())
        throw ForcingError("language id " + std::to_string(id) + " outside the " + std::to_string(languages()) +
                           " configured languages");
    return embedding(*table_, langs);
  }

 private:
  Tensor* table_ = nullptr;
};

/// Target-forcing configuration bound to a model: which mode, which site, and the site's table.
class Injector {
 public:
  Injector() = default;
  Injector(Mode mode, Site site, LanguageEmbeddingTable table) : mode_(mode), site_(site), table_(table) {
    if (mode_ != Mode::kNone && !table_.defined()) throw ForcingError("forcing enabled without an embedding table");
  }

  Mode mode() const { return mode_; }
  Site site() const { return site_; }
  bool active_at(Site s) const { return mode_ != Mode::kNone && site_ == s; }
  bool lengthens(Site s) const { return active_at(s) && mode_ == Mode::kConcat; }
  const LanguageEmbeddingTable& table() const { return table_; }

  /// Applies forcing to a B×T×W representation when `s` is the configured site; otherwise identity.
  Tensor inject(Site s, const Tensor& x, const std::vector<std::int64_t>& langs) const {
    if (!active_at(s)) return x;
    if (langs.size() != x.dim(0))
      throw ForcingError("target forcing at '" + to_string(s) + "' needs one language id per utterance (" +
                         std::to_string(x.dim(0)) + " utterances, " + std::to_string(langs.size()) + " ids)");
    const Tensor l = table_.lookup(langs);
    return mode_ == Mode::kConcat ? apply_concat(x, l) : apply_merge(x, l);
  }

 private:
  Mode mode_ = Mode::kNone;
  Site site_ = Site::kPre;
  LanguageEmbeddingTable table_;
};

}  // namespace mlst::forcing
