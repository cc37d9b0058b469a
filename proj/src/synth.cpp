#include "msn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "msn/error.hpp"
#include "msn/parallel.hpp"

namespace msn::data {
namespace fs = std::filesystem;

namespace {

constexpr double kHarmonicGain[] = {1.0, 0.5, 0.25};
constexpr double kLevel = 0.3;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(a), std::uint32_t(b),
                    std::uint32_t(c)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (std::uint64_t(words[0]) << 32) | words[1];
}

std::string file_name(bool anomalous, std::size_t cls, std::size_t index) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_id_%02zu_%08zu.wav", anomalous ? "anomaly" : "normal", cls, index);
  return buf;
}

}  // namespace

AnomalyKind parse_anomaly_kind(const std::string& s) {
  if (s == "detune") return AnomalyKind::detune;
  if (s == "transient") return AnomalyKind::transient;
  if (s == "band-noise") return AnomalyKind::band_noise;
  fail(Errc::config, "unknown anomaly kind '" + s + "' (detune|transient|band-noise)");
}

std::string to_string(AnomalyKind k) {
  switch (k) {
    case AnomalyKind::detune: return "detune";
    case AnomalyKind::transient: return "transient";
    default: return "band-noise";
  }
}

std::vector<double> SynthConfig::frequencies() const {
  if (!base_freqs.empty()) return base_freqs;
  std::vector<double> f(classes);
  for (std::size_t k = 0; k < classes; ++k) f[k] = f0_start * std::pow(f0_ratio, double(k));
  return f;
}

void SynthConfig::validate() const {
  require(classes >= 1 && train_per_class >= 1, Errc::config, "synth counts must be positive");
  require(seconds > 0 && sample_rate > 0, Errc::config, "synth duration and sample rate must be positive");
  require(base_freqs.empty() || base_freqs.size() == classes, Errc::config,
          "base_freqs must list one frequency per class");
  require(detune > 0 && noise_floor >= 0, Errc::config, "detune must be positive, noise_floor non-negative");
  const double nyquist = sample_rate / 2.0;
  for (double f : frequencies())
    require(f > 0 && 3.0 * f * std::max(1.0, detune) * 1.01 < nyquist, Errc::config,
            "base frequency " + std::to_string(f) + " Hz puts harmonics above Nyquist");
}

dsp::AudioClip synth_clip(const SynthConfig& cfg, std::size_t cls, bool anomalous, std::uint64_t clip_seed) {
  require(cls < cfg.classes, Errc::invalid_argument, "class index out of range");
  std::mt19937_64 rng(clip_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double sr = cfg.sample_rate;
  const std::size_t n = std::size_t(std::llround(cfg.seconds * sr));
  const double two_pi = 2.0 * std::numbers::pi;

  double f0 = cfg.frequencies()[cls] * (1.0 + 0.01 * (unit(rng) - 0.5));
  if (anomalous && cfg.anomaly == AnomalyKind::detune) f0 *= cfg.detune;
  const double am_rate = 2.0 + double(cls);
  const double am_phase = two_pi * unit(rng);
  double phase[3];
  for (double& p : phase) p = two_pi * unit(rng);

  dsp::AudioClip clip{std::vector<double>(n), cfg.sample_rate};
  for (std::size_t i = 0; i < n; ++i) {
    const double t = double(i) / sr;
    const double am = 1.0 + 0.3 * std::sin(two_pi * am_rate * t + am_phase);
    double v = 0.0;
    for (int h = 0; h < 3; ++h) v += kHarmonicGain[h] * std::sin(two_pi * f0 * (h + 1) * t + phase[h]);
    clip.samples[i] = kLevel * am * v + cfg.noise_floor * gauss(rng);
  }

  if (anomalous && cfg.anomaly == AnomalyKind::transient) {
    const int clicks = 3 + int(rng() % 4);
    const std::size_t len = std::max<std::size_t>(8, std::size_t(0.004 * sr));
    for (int c = 0; c < clicks; ++c) {
      const std::size_t start = std::size_t(unit(rng) * double(n - std::min(n, len)));
      const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
      for (std::size_t k = 0; k < len && start + k < n; ++k)
        clip.samples[start + k] += sign * 0.5 * std::exp(-6.0 * double(k) / double(len)) * gauss(rng);
    }
  } else if (anomalous && cfg.anomaly == AnomalyKind::band_noise) {
    const double center = (0.35 + 0.3 * unit(rng)) * sr / 2.0;
    constexpr int kTones = 24;
    std::vector<double> freq(kTones), ph(kTones);
    for (int k = 0; k < kTones; ++k) {
      freq[k] = center + 100.0 * (unit(rng) - 0.5);
      ph[k] = two_pi * unit(rng);
    }
    for (std::size_t i = 0; i < n; ++i) {
      double v = 0.0;
      for (int k = 0; k < kTones; ++k) v += std::sin(two_pi * freq[k] * double(i) / sr + ph[k]);
      clip.samples[i] += 0.15 * v / std::sqrt(double(kTones));
    }
  }
  return clip;
}

Manifest synth_dataset(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const fs::path train_dir = out_dir / cfg.machine_type / "train";
  const fs::path test_dir = out_dir / cfg.machine_type / "test";
  std::error_code ec;
  fs::create_directories(train_dir, ec);
  fs::create_directories(test_dir, ec);
  require(fs::is_directory(train_dir) && fs::is_directory(test_dir), Errc::io,
          "cannot create output directory " + out_dir.string());

  struct Job {
    std::size_t cls;
    bool anomalous;
    Split split;
    std::size_t index;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    for (std::size_t i = 0; i < cfg.train_per_class; ++i) jobs.push_back({c, false, Split::train, i});
    for (std::size_t i = 0; i < cfg.test_normal_per_class; ++i) jobs.push_back({c, false, Split::test, i});
    for (std::size_t i = 0; i < cfg.test_anomaly_per_class; ++i) jobs.push_back({c, true, Split::test, i});
  }

  Manifest m;
  m.base = out_dir;
  m.rows.resize(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    const Job& job = jobs[j];
    const std::string name = file_name(job.anomalous, job.cls, job.index);
    const std::string rel = cfg.machine_type + "/" + to_string(job.split) + "/" + name;
    const std::uint64_t seed = mix_seed(cfg.seed, job.cls, job.split == Split::train ? 0 : 1 + job.anomalous, job.index);
    dsp::write_wav(out_dir / rel, synth_clip(cfg, job.cls, job.anomalous, seed));
    char id[16];
    std::snprintf(id, sizeof id, "id_%02zu", job.cls);
    m.rows[j] = {rel, cfg.machine_type, id, "", job.split, job.anomalous ? Label::anomaly : Label::normal};
  });
  std::sort(m.rows.begin(), m.rows.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
  save_manifest(m, out_dir / "manifest.csv");
  return m;
}

}  // namespace msn::data
