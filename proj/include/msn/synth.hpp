#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msn/dsp.hpp"
#include "msn/manifest.hpp"

namespace msn::data {

enum class AnomalyKind { detune, transient, band_noise };

AnomalyKind parse_anomaly_kind(const std::string& s);
std::string to_string(AnomalyKind k);

/// Toy machines: each class hums a harmonic stack (f0, 2f0, 3f0) under a slow
/// amplitude modulation, over white noise.
struct SynthConfig {
  std::size_t classes = 4;
  std::size_t train_per_class = 30;
  std::size_t test_normal_per_class = 10;
  std::size_t test_anomaly_per_class = 10;
  double seconds = 1.0;
  int sample_rate = 8000;
  std::vector<double> base_freqs;  // empty: f0_start * f0_ratio^k
  double f0_start = 400.0;
  double f0_ratio = 1.15;
  AnomalyKind anomaly = AnomalyKind::detune;
  double detune = 1.06;
  double noise_floor = 0.01;
  std::string machine_type = "synth";
  std::uint64_t seed = 0;

  std::vector<double> frequencies() const;
  /// Throws Errc::config on non-positive counts or harmonics above Nyquist.
  void validate() const;
};

/// One clip of class `cls`; identical (config, cls, anomalous, clip_seed) give identical samples.
dsp::AudioClip synth_clip(const SynthConfig& cfg, std::size_t cls, bool anomalous, std::uint64_t clip_seed);

/// Writes <out>/<type>/{train,test}/{normal,anomaly}_id_XX_NNNNNNNN.wav plus
/// <out>/manifest.csv (the truth manifest) and returns the manifest.
Manifest synth_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace msn::data
