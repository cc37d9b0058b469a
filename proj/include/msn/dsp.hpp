#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace msn::dsp {

/// Mono waveform with samples nominally in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 0;

  std::size_t size() const { return samples.size(); }
  double seconds() const { return double(samples.size()) / sample_rate; }
};

/// F x T magnitude matrix, frequency-major: value(f, t) = values[f * frames + t].
struct Spectrogram {
  std::vector<double> values;
  std::size_t freq_bins = 0;
  std::size_t frames = 0;

  double at(std::size_t f, std::size_t t) const { return values[f * frames + t]; }
  double& at(std::size_t f, std::size_t t) { return values[f * frames + t]; }
};

/// One-sided magnitude spectrum of a whole clip.
struct Spectrum {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

struct StftParams {
  std::size_t window = 1024;
  std::size_t hop = 512;
};

enum class SampleFormat { pcm16, pcm24, pcm32, float32 };

AudioClip load_wav(const std::filesystem::path& path);

/// Writes mono PCM/float WAV. Samples are clipped to [-1, 1] for integer formats.
void write_wav(const std::filesystem::path& path, const AudioClip& clip,
               SampleFormat format = SampleFormat::pcm16);

/// Tiles or truncates to round(target_seconds * sample_rate) samples.
AudioClip fix_length(const AudioClip& clip, double target_seconds);

/// Hann-windowed magnitude STFT without centering: T = 1 + (len - window) / hop.
Spectrogram stft_magnitude(const AudioClip& clip, StftParams params = {});

/// |DFT| / len over the whole clip, bins 0 .. len/2.
Spectrum utterance_spectrum(const AudioClip& clip);

/// Periodic Hann window of the given length.
std::vector<double> hann_window(std::size_t n);

/// Magnitudes of the one-sided real DFT (bins 0 .. n/2), unscaled.
std::vector<double> rfft_magnitude(std::span<const double> x);

std::size_t stft_frame_count(std::size_t num_samples, StftParams params);

}  // namespace msn::dsp
