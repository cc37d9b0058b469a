#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>

#include "doctest.h"
#include "msn/dsp.hpp"
#include "msn/error.hpp"

using namespace msn;
using namespace msn::dsp;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "msn_test_dsp";
  fs::create_directories(dir);
  return dir / name;
}

void le(std::string& s, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) s.push_back(char((v >> (8 * i)) & 0xFF));
}

// Hand-assembled RIFF file; frames holds interleaved raw sample bytes.
void write_raw_wav(const fs::path& p, std::uint16_t format, std::uint16_t channels, std::uint32_t rate,
                   std::uint16_t bits, const std::string& frames) {
  std::string s = "RIFF";
  le(s, 36 + frames.size(), 4);
  s += "WAVEfmt ";
  le(s, 16, 4);
  le(s, format, 2);
  le(s, channels, 2);
  le(s, rate, 4);
  le(s, rate * channels * bits / 8, 4);
  le(s, channels * bits / 8, 2);
  le(s, bits, 2);
  s += "data";
  le(s, frames.size(), 4);
  s += frames;
  std::ofstream(p, std::ios::binary).write(s.data(), std::streamsize(s.size()));
}

// O(L^2) one-sided DFT magnitudes.
std::vector<double> direct_dft_magnitude(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<double> mag(n / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) {
    double re = 0, im = 0;
    for (std::size_t t = 0; t < n; ++t) {
      const double a = -2.0 * std::numbers::pi * double(k * t % n) / double(n);
      re += x[t] * std::cos(a);
      im += x[t] * std::sin(a);
    }
    mag[k] = std::hypot(re, im);
  }
  return mag;
}

AudioClip random_clip(std::size_t n, int rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1, 1);
  AudioClip c;
  c.sample_rate = rate;
  for (std::size_t i = 0; i < n; ++i) c.samples.push_back(d(rng));
  return c;
}

Errc error_code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::runtime;
}

}  // namespace

TEST_CASE("load_wav decodes full-scale 16-bit PCM") {
  std::string frames;
  for (int i = 0; i < 100; ++i) le(frames, 32767, 2);
  auto p = temp_path("const.wav");
  write_raw_wav(p, 1, 1, 16000, 16, frames);
  AudioClip c = load_wav(p);
  CHECK(c.sample_rate == 16000);
  REQUIRE(c.size() == 100);
  for (double s : c.samples) CHECK(std::abs(s - 1.0) <= 1.0 / 32768.0);
}

TEST_CASE("load_wav averages channels to mono") {
  std::string frames;
  for (int i = 0; i < 50; ++i) {
    le(frames, std::uint16_t(std::int16_t(16384)), 2);
    le(frames, std::uint16_t(std::int16_t(-16384)), 2);
  }
  auto p = temp_path("stereo.wav");
  write_raw_wav(p, 1, 2, 8000, 16, frames);
  AudioClip c = load_wav(p);
  REQUIRE(c.size() == 50);
  for (double s : c.samples) CHECK(s == 0.0);
}

TEST_CASE("load_wav reads 8/24/32-bit integer and float encodings") {
  {
    std::string f;
    le(f, 192, 1);  // (192 - 128) / 128
    auto p = temp_path("u8.wav");
    write_raw_wav(p, 1, 1, 8000, 8, f);
    CHECK(load_wav(p).samples[0] == doctest::Approx(0.5));
  }
  {
    std::string f;
    le(f, 0xC00000, 3);  // -0.5 in 24-bit
    auto p = temp_path("s24.wav");
    write_raw_wav(p, 1, 1, 8000, 24, f);
    CHECK(load_wav(p).samples[0] == doctest::Approx(-0.5));
  }
  {
    std::string f;
    le(f, 0x20000000, 4);
    auto p = temp_path("s32.wav");
    write_raw_wav(p, 1, 1, 8000, 32, f);
    CHECK(load_wav(p).samples[0] == doctest::Approx(0.25));
  }
  {
    AudioClip c{{0.125, -0.75}, 22050};
    auto p = temp_path("f32.wav");
    write_wav(p, c, SampleFormat::float32);
    AudioClip r = load_wav(p);
    CHECK(r.sample_rate == 22050);
    CHECK(r.samples == c.samples);
  }
}

TEST_CASE("load_wav reports each failure distinctly") {
  CHECK(error_code_of([] { load_wav(temp_path("does_not_exist.wav")); }) == Errc::missing_file);

  auto junk = temp_path("junk.wav");
  std::ofstream(junk, std::ios::binary) << "this is not a riff file";
  CHECK(error_code_of([&] { load_wav(junk); }) == Errc::malformed_header);

  std::string frames(16, '\0');
  auto adpcm = temp_path("adpcm.wav");
  write_raw_wav(adpcm, 2, 1, 8000, 4, frames);
  CHECK(error_code_of([&] { load_wav(adpcm); }) == Errc::unsupported_encoding);
}

TEST_CASE("write_wav then load_wav round-trips a sine") {
  AudioClip c;
  c.sample_rate = 8000;
  for (int i = 0; i < 8000; ++i) c.samples.push_back(0.9 * std::sin(2 * std::numbers::pi * 440.0 * i / 8000.0));
  auto p = temp_path("sine.wav");
  write_wav(p, c);
  AudioClip r = load_wav(p);
  REQUIRE(r.size() == c.size());
  double worst = 0;
  for (std::size_t i = 0; i < c.size(); ++i) worst = std::max(worst, std::abs(r.samples[i] - c.samples[i]));
  CHECK(worst < 1e-4);
}

TEST_CASE("fix_length tiles, truncates and is idempotent") {
  AudioClip ten = random_clip(10 * 100, 100, 1);
  CHECK(fix_length(ten, 10.0).samples == ten.samples);

  AudioClip six = random_clip(6 * 100, 100, 2);
  AudioClip tiled = fix_length(six, 18.0);
  REQUIRE(tiled.size() == 1800);
  for (std::size_t i = 0; i < tiled.size(); ++i) CHECK(tiled.samples[i] == six.samples[i % six.size()]);

  AudioClip twelve = random_clip(1200, 100, 3);
  AudioClip cut = fix_length(twelve, 10.0);
  REQUIRE(cut.size() == 1000);
  CHECK(std::equal(cut.samples.begin(), cut.samples.end(), twelve.samples.begin()));

  AudioClip odd = random_clip(777, 100, 4);
  AudioClip once = fix_length(odd, 12.34);
  CHECK(fix_length(once, 12.34).samples == once.samples);

  CHECK_THROWS_AS(fix_length(odd, 0.0), Error);
  CHECK_THROWS_AS(fix_length(AudioClip{{}, 100}, 1.0), Error);
}

TEST_CASE("stft_magnitude frame count and shape") {
  AudioClip c{std::vector<double>(160000, 0.0), 16000};
  Spectrogram s = stft_magnitude(c);
  CHECK(s.freq_bins == 513);
  CHECK(s.frames == 311);
  for (double v : s.values) CHECK(v == 0.0);

  CHECK_THROWS_AS(stft_magnitude(AudioClip{std::vector<double>(1000, 0.1), 16000}), Error);
}

TEST_CASE("stft_magnitude peaks at the bin of a bin-centred sine") {
  for (std::size_t k : {5u, 37u, 200u}) {
    AudioClip c;
    c.sample_rate = 16000;
    const double freq = double(k) * 16000.0 / 1024.0;
    for (int i = 0; i < 8192; ++i) c.samples.push_back(std::sin(2 * std::numbers::pi * freq * i / 16000.0));
    Spectrogram s = stft_magnitude(c);
    for (std::size_t t = 0; t < s.frames; ++t) {
      std::size_t arg = 0;
      for (std::size_t f = 1; f < s.freq_bins; ++f)
        if (s.at(f, t) > s.at(arg, t)) arg = f;
      CHECK(arg == k);
    }
  }
}

TEST_CASE("stft frames match a direct DFT of each windowed frame") {
  AudioClip c = random_clip(1024 + 3 * 512, 16000, 9);
  Spectrogram s = stft_magnitude(c);
  auto w = hann_window(1024);
  for (std::size_t t = 0; t < s.frames; ++t) {
    std::vector<double> frame(1024);
    for (std::size_t i = 0; i < 1024; ++i) frame[i] = c.samples[t * 512 + i] * w[i];
    auto ref = direct_dft_magnitude(frame);
    for (std::size_t f = 0; f < s.freq_bins; ++f)
      CHECK(s.at(f, t) == doctest::Approx(ref[f]).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("utterance_spectrum basics") {
  CHECK(utterance_spectrum(AudioClip{std::vector<double>(100, 0.0), 8}).values == std::vector<double>(51, 0.0));

  Spectrum dc = utterance_spectrum(AudioClip{std::vector<double>(64, 0.3), 8});
  REQUIRE(dc.size() == 33);
  CHECK(dc.values[0] == doctest::Approx(0.3));
  for (std::size_t k = 1; k < dc.size(); ++k) CHECK(dc.values[k] < 1e-12);

  AudioClip two{{}, 200};
  for (int i = 0; i < 200; ++i)
    two.samples.push_back(std::sin(2 * std::numbers::pi * 13 * i / 200.0) +
                          0.5 * std::sin(2 * std::numbers::pi * 41 * i / 200.0));
  Spectrum s = utterance_spectrum(two);
  auto ref = direct_dft_magnitude(two.samples);
  std::vector<std::size_t> peaks;
  for (std::size_t k = 0; k < s.size(); ++k) {
    CHECK(s.values[k] == doctest::Approx(ref[k] / 200.0).scale(1.0));
    if (s.values[k] > 0.1) peaks.push_back(k);
  }
  CHECK(peaks == std::vector<std::size_t>{13, 41});

  CHECK_THROWS_AS(utterance_spectrum(AudioClip{{}, 8}), Error);
}

TEST_CASE("utterance_spectrum satisfies Parseval") {
  for (std::size_t n : {31u, 64u, 99u, 128u}) {
    AudioClip c = random_clip(n, 8000, n);
    Spectrum s = utterance_spectrum(c);
    double energy = 0;
    for (double x : c.samples) energy += x * x;
    double spec = s.values[0] * s.values[0];
    const std::size_t last = s.size() - 1;
    for (std::size_t k = 1; k < s.size(); ++k) {
      const bool nyquist = (n % 2 == 0) && k == last;
      spec += (nyquist ? 1.0 : 2.0) * s.values[k] * s.values[k];
    }
    CHECK(spec * double(n) == doctest::Approx(energy).epsilon(1e-6));
  }
}
