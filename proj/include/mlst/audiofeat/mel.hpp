#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlst/audiofeat/wav.hpp"

namespace mlst::audio {

/// T×F matrix of log-MEL energies, row-major (frame-major).
struct FeatureSequence {
  std::string id;
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> data;

  double at(std::size_t t, std::size_t f) const { return data[t * bins + f]; }
};

struct MelOptions {
  std::size_t n_mels = 40;
  std::size_t window = 400;  // 25 ms at 16 kHz
  std::size_t hop = 160;     // 10 ms
  std::size_t fft_size = 512;
  double low_hz = 0.0;
  double high_hz = 8000.0;
  double log_floor = 1e-10;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

inline std::size_t frame_count(std::size_t samples, const MelOptions& opt = {}) {
  if (samples < opt.window) return 0;
  return (samples - opt.window) / opt.hop + 1;
}

/// Triangular filterbank on an HTK mel scale, evaluated at FFT bin frequencies.
class MelFilterbank {
 public:
  explicit MelFilterbank(const MelOptions& opt = {}) : opt_(opt) {
    const std::size_t n_bins = opt.fft_size / 2 + 1;
    const double mlo = hz_to_mel(opt.low_hz), mhi = hz_to_mel(opt.high_hz);
    std::vector<double> edges(opt.n_mels + 2);
    for (std::size_t i = 0; i < edges.size(); ++i)
      edges[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) / static_cast<double>(opt.n_mels + 1));
    centers_.assign(edges.begin() + 1, edges.end() - 1);
    weights_.assign(opt.n_mels * n_bins, 0.0);
    for (std::size_t m = 0; m < opt.n_mels; ++m) {
      const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
      for (std::size_t k = 0; k < n_bins; ++k) {
        const double f = static_cast<double>(k) * kSampleRate / static_cast<double>(opt.fft_size);
        double w = 0.0;
        if (f > left && f <= center) w = (f - left) / (center - left);
        else if (f > center && f < right) w = (right - f) / (right - center);
        weights_[m * n_bins + k] = w;
      }
    }
  }

  const std::vector<double>& center_frequencies() const { return centers_; }
  double weight(std::size_t mel, std::size_t bin) const { return weights_[mel * (opt_.fft_size / 2 + 1) + bin]; }

 private:
  MelOptions opt_;
  std::vector<double> centers_;
  std::vector<double> weights_;
};

namespace detail {
inline std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Log-MEL spectrogram of 16 kHz mono samples: Hann window, zero-padded FFT,
/// power spectrum, triangular MEL filters, natural log with a floor.
class MelExtractor {
 public:
  explicit MelExtractor(MelOptions opt = {}) : opt_(opt), bank_(opt) {
    if (opt_.fft_size < opt_.window) throw std::invalid_argument("fft size smaller than window");
    window_.resize(opt_.window);
    for (std::size_t n = 0; n < opt_.window; ++n)
      window_[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                        static_cast<double>(opt_.window));
    in_ = fftw_alloc_real(opt_.fft_size);
    out_ = fftw_alloc_complex(opt_.fft_size / 2 + 1);
    std::lock_guard lock(detail::fftw_plan_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(opt_.fft_size), in_, out_, FFTW_ESTIMATE);
  }
  ~MelExtractor() {
    std::lock_guard lock(detail::fftw_plan_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  MelExtractor(const MelExtractor&) = delete;
  MelExtractor& operator=(const MelExtractor&) = delete;

  const MelFilterbank& filterbank() const { return bank_; }

  FeatureSequence operator()(const std::vector<double>& samples, std::string id = {}) {
    if (samples.size() < opt_.window)
      throw FormatError("audio '" + id + "' shorter than one analysis window (" + std::to_string(samples.size()) +
                        " < " + std::to_string(opt_.window) + " samples)");
    const std::size_t T = frame_count(samples.size(), opt_);
    const std::size_t n_bins = opt_.fft_size / 2 + 1;
    FeatureSequence fs{std::move(id), T, opt_.n_mels, std::vector<double>(T * opt_.n_mels)};
    std::vector<double> power(n_bins);
    for (std::size_t t = 0; t < T; ++t) {
      std::fill(in_, in_ + opt_.fft_size, 0.0);
      for (std::size_t n = 0; n < opt_.window; ++n) in_[n] = samples[t * opt_.hop + n] * window_[n];
      fftw_execute(plan_);
      for (std::size_t k = 0; k < n_bins; ++k) power[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
      for (std::size_t m = 0; m < opt_.n_mels; ++m) {
        double e = 0.0;
        for (std::size_t k = 0; k < n_bins; ++k) e += bank_.weight(m, k) * power[k];
        fs.data[t * opt_.n_mels + m] = std::log(std::max(e, opt_.log_floor));
      }
    }
    return fs;
  }

 private:
  MelOptions opt_;
  MelFilterbank bank_;
  std::vector<double> window_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

inline FeatureSequence mel_spectrogram(const std::vector<double>& samples, const MelOptions& opt = {},
                                       std::string id = {}) {
  MelExtractor ex(opt);
  return ex(samples, std::move(id));
}

/// Mean/variance normalisation. Global: one mean and std over the whole
/// matrix. Per-coefficient: statistics per MEL bin. Std is floored at 1e-8.
inline FeatureSequence normalize(FeatureSequence fs, bool per_coefficient = false) {
  const double floor = 1e-8;
  if (fs.data.size() < 2) throw std::invalid_argument("normalize: need at least two cells");
  if (!per_coefficient) {
    double mu = 0.0;
    for (double v : fs.data) mu += v;
    mu /= static_cast<double>(fs.data.size());
    double var = 0.0;
    for (double v : fs.data) var += (v - mu) * (v - mu);
    var /= static_cast<double>(fs.data.size());
    const double sd = std::max(std::sqrt(var), floor);
    for (double& v : fs.data) v = (v - mu) / sd;
    return fs;
  }
  for (std::size_t f = 0; f < fs.bins; ++f) {
    double mu = 0.0, var = 0.0;
    for (std::size_t t = 0; t < fs.frames; ++t) mu += fs.data[t * fs.bins + f];
    mu /= static_cast<double>(fs.frames);
    for (std::size_t t = 0; t < fs.frames; ++t) var += std::pow(fs.data[t * fs.bins + f] - mu, 2);
    var /= static_cast<double>(fs.frames);
    const double sd = std::max(std::sqrt(var), floor);
    for (std::size_t t = 0; t < fs.frames; ++t) fs.data[t * fs.bins + f] = (fs.data[t * fs.bins + f] - mu) / sd;
  }
  return fs;
}

}  // namespace mlst::audio
