#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace mlst::trainer {

/// Linear warmup from lr_init to lr_max, then inverse square-root decay anchored at lr_max.
struct LRSchedule {
  double lr_init = 0.0003;
  double lr_max = 0.01;
  std::uint64_t warmup = 4000;

  void validate() const {
    if (!(lr_init >= 0.0) || !(lr_max > 0.0)) throw std::invalid_argument("schedule: learning rates must be positive");
    if (warmup == 0) throw std::invalid_argument("schedule: warmup must be at least one step");
  }

  bool operator==(const LRSchedule&) const = default;
};

inline double lr_at(std::uint64_t step, const LRSchedule& s) {
  const double t = static_cast<double>(step), w = static_cast<double>(s.warmup);
  if (step <= s.warmup) return s.lr_init + (s.lr_max - s.lr_init) * t / w;
  return s.lr_max * std::sqrt(w / t);
}

}  // namespace mlst::trainer
