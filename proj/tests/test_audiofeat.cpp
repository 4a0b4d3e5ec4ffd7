#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <sstream>

#include "mlst/audiofeat/featstore.hpp"
#include "mlst/audiofeat/manifest.hpp"
#include "mlst/audiofeat/mel.hpp"
#include "mlst/audiofeat/vocab.hpp"
#include "mlst/audiofeat/wav.hpp"

using namespace mlst;
using namespace mlst::audio;

namespace {

std::vector<double> sine(double hz, std::size_t n, double amp = 0.5) {
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = amp * std::sin(2 * std::numbers::pi * hz * static_cast<double>(i) / 16000.0);
  return s;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mlst_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Mel, OneSecondGives98Frames) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0, 0.1);
  std::vector<double> s(16000);
  for (double& v : s) v = d(rng);
  FeatureSequence fs = mel_spectrogram(s);
  EXPECT_EQ(fs.frames, 98u);
  EXPECT_EQ(fs.bins, 40u);
}

TEST(Mel, SingleWindow) {
  EXPECT_EQ(mel_spectrogram(sine(440, 400)).frames, 1u);
  EXPECT_THROW(mel_spectrogram(sine(440, 399)), FormatError);
}

TEST(Mel, FrameCountFormulaAgreesWithWindowPlacement) {
  for (std::size_t n = 400; n <= 48000; ++n) {
    std::size_t placed = 0;
    for (std::size_t start = 0; start + 400 <= n; start += 160) ++placed;
    ASSERT_EQ(frame_count(n), placed) << n;
  }
  for (std::size_t n : {400u, 559u, 560u, 4321u, 16000u, 47999u})
    EXPECT_EQ(mel_spectrogram(sine(300, n)).frames, (n - 400) / 160 + 1);
}

TEST(Mel, SinePeaksInFilterNearestItsFrequency) {
  // Independent centre table: 42 points evenly spaced on 2595·log10(1+f/700) over 0–8000 Hz.
  const double top = 2595.0 * std::log10(1.0 + 8000.0 / 700.0);
  std::size_t nearest = 0;
  double best = 1e18;
  for (std::size_t m = 0; m < 40; ++m) {
    const double mel = top * static_cast<double>(m + 1) / 41.0;
    const double hz = 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
    if (std::abs(hz - 1000.0) < best) {
      best = std::abs(hz - 1000.0);
      nearest = m;
    }
  }
  FeatureSequence fs = mel_spectrogram(sine(1000, 8000));
  for (std::size_t t = 0; t < fs.frames; ++t) {
    std::size_t arg = 0;
    for (std::size_t m = 1; m < 40; ++m)
      if (fs.at(t, m) > fs.at(t, arg)) arg = m;
    EXPECT_EQ(arg, nearest) << "frame " << t;
  }
  MelFilterbank bank;
  EXPECT_NEAR(bank.center_frequencies()[nearest], 1000.0, 60.0);
}

TEST(Mel, SilenceUsesLogFloor) {
  FeatureSequence fs = mel_spectrogram(std::vector<double>(800, 0.0));
  for (double v : fs.data) EXPECT_EQ(v, std::log(1e-10));
}

TEST(Mel, Deterministic) {
  auto s = sine(700, 5000);
  EXPECT_EQ(mel_spectrogram(s).data, mel_spectrogram(s).data);
}

TEST(Normalize, ConstantBecomesZeros) {
  FeatureSequence fs{"c", 3, 4, std::vector<double>(12, 5.5)};
  for (double v : normalize(fs).data) EXPECT_EQ(v, 0.0);
}

TEST(Normalize, StatisticsAndIdempotence) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(-20, 3);
  for (int trial = 0; trial < 10; ++trial) {
    FeatureSequence fs{"x", 17, 40, std::vector<double>(17 * 40)};
    for (double& v : fs.data) v = d(rng);
    FeatureSequence n = normalize(fs);
    double mu = 0, var = 0;
    for (double v : n.data) mu += v;
    mu /= static_cast<double>(n.data.size());
    for (double v : n.data) var += (v - mu) * (v - mu);
    const double sd = std::sqrt(var / static_cast<double>(n.data.size()));
    EXPECT_LT(std::abs(mu), 1e-9);
    EXPECT_LT(std::abs(sd - 1.0), 1e-9);
    FeatureSequence again = normalize(n);
    for (std::size_t i = 0; i < n.data.size(); ++i) EXPECT_NEAR(again.data[i], n.data[i], 1e-12);
  }
}

TEST(Normalize, PerCoefficientOption) {
  FeatureSequence fs{"x", 4, 2, {1, 10, 2, 20, 3, 30, 4, 40}};
  FeatureSequence n = normalize(fs, true);
  for (std::size_t f = 0; f < 2; ++f) {
    double mu = 0;
    for (std::size_t t = 0; t < 4; ++t) mu += n.at(t, f);
    EXPECT_NEAR(mu, 0.0, 1e-12);
  }
  EXPECT_NEAR(n.at(0, 0), n.at(0, 1), 1e-12);
}

TEST(Wav, RoundTripAndFormatErrors) {
  auto dir = temp_dir("wav");
  auto s = sine(440, 1600);
  write_wav((dir / "a.wav").string(), s);
  auto back = read_wav((dir / "a.wav").string());
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(back[i], s[i], 1.0 / 16000.0);
  EXPECT_THROW(decode_wav(encode_wav(s, 8000)), FormatError);
  EXPECT_THROW(decode_wav(encode_wav(s, 16000, 2)), FormatError);
  EXPECT_THROW(decode_wav("not a wave file"), FormatError);
}

TEST(FeatureStore, BinaryLayoutAndLookup) {
  auto dir = temp_dir("store");
  const std::string path = (dir / "feats.bin").string();
  {
    FeatureWriter w(path);
    w.write({"u1", 2, 3, {1, 2, 3, 4, 5, 6.5}});
    w.write({"u2", 1, 2, {-1, 0.25}});
  }
  // u32 T, u32 F, then float32 payload, little-endian
  std::ifstream raw(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
  ASSERT_EQ(bytes.size(), 8u + 24u + 8u + 8u);
  EXPECT_EQ(bytes[0], 2);
  EXPECT_EQ(bytes[4], 3);
  float f;
  std::memcpy(&f, bytes.data() + 8 + 5 * 4, 4);
  EXPECT_EQ(f, 6.5f);
  FeatureStore store(path);
  EXPECT_EQ(store.size(), 2u);
  EXPECT_EQ(store.load("u2").data, (std::vector<double>{-1, 0.25}));
  EXPECT_EQ(store.load("u1").frames, 2u);
  EXPECT_THROW(store.load("nope"), FormatError);
}

TEST(Manifest, AcceptsAsrRowsAndRejectsBadRows) {
  ManifestOptions opt{{"de", "nl"}, false, {}};
  std::istringstream ok("a.wav\thello\thallo\tde\ttrain\nb.wav\thello\thello\ten\ttrain\n");
  auto rows = parse_manifest(ok, opt);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_TRUE(rows[1].is_asr());

  auto expect_line_error = [&](const std::string& text, const std::string& needle) {
    std::istringstream in(text);
    try {
      parse_manifest(in, opt, "m.tsv");
      FAIL() << "accepted: " << text;
    } catch (const ManifestError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  expect_line_error("a.wav\thi\thallo\tde\ttrain\nb.wav\thi\t\tde\ttrain\n", "m.tsv:2: empty target");
  expect_line_error("a.wav\thi\tsalut\tfr\ttrain\n", "m.tsv:1: unknown language tag 'fr'");
  expect_line_error("a.wav\thi\tthere\n", "m.tsv:1: expected 5");
  expect_line_error("a.wav\thi\tbye\ten\ttrain\n", "m.tsv:1: source-language row");
  ManifestOptions strict{{"de"}, true, temp_dir("manifest")};
  std::istringstream missing("nothere.wav\thi\thallo\tde\ttrain\n");
  EXPECT_THROW(parse_manifest(missing, strict), ManifestError);
  EXPECT_THROW(read_manifest("/nonexistent/manifest.tsv", opt), ManifestError);
}

TEST(Vocabulary, DeterministicSortedAndLossless) {
  std::vector<ManifestEntry> rows{{"a", "x", "zebra, ok!", "de", "train"},
                                  {"b", "x", "αβγ", "nl", "train"},
                                  {"c", "x", "QQQ", "de", "test"}};
  auto v1 = build_vocab(rows, {"de", "nl"});
  auto v2 = build_vocab(rows, {"de", "nl"});
  EXPECT_EQ(v1.serialize(), v2.serialize());
  EXPECT_EQ(v1.id(U' '), 4);  // lowest code point after reserved ids
  const auto& chars = v1.characters();
  EXPECT_TRUE(std::is_sorted(chars.begin(), chars.end()));
  EXPECT_EQ(v1.decode(v1.encode("zebra, ok!")), "zebra, ok!");
  EXPECT_EQ(v1.decode(v1.encode("αβγ")), "αβγ");
  // test split is excluded from the vocabulary: unseen chars become unk
  EXPECT_EQ(v1.encode("Q")[0], text::Vocabulary::kUnk);
  EXPECT_EQ(v1.size(), chars.size() + 4);
}
