#include "msn/dsp.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "msn/error.hpp"

namespace msn::dsp {
namespace {

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
using RealBuffer = std::unique_ptr<double[], FftwFree>;
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

// fftw planning is not thread-safe; execution with new-array calls is.
class PlanCache {
 public:
  fftw_plan get(std::size_t n) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    RealBuffer in(fftw_alloc_real(n));
    ComplexBuffer out(fftw_alloc_complex(n / 2 + 1));
    // FFTW_ESTIMATE keeps the chosen algorithm, and so the output bits, run-independent.
    fftw_plan plan = fftw_plan_dft_r2c_1d(int(n), in.get(), out.get(), FFTW_ESTIMATE);
    if (!plan) fail(Errc::runtime, "fftw planning failed for n=" + std::to_string(n));
    plans_.emplace(n, plan);
    return plan;
  }

  ~PlanCache() {
    for (auto& [n, plan] : plans_) fftw_destroy_plan(plan);
  }

 private:
  std::mutex mutex_;
  std::map<std::size_t, fftw_plan> plans_;
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

void check_clip(const AudioClip& clip) {
  require(!clip.samples.empty(), Errc::invalid_argument, "audio clip is empty");
  require(clip.sample_rate > 0, Errc::invalid_argument, "sample rate must be positive");
}

}  // namespace

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
  return w;
}

std::vector<double> rfft_magnitude(std::span<const double> x) {
  const std::size_t n = x.size();
  require(n > 0, Errc::invalid_argument, "rfft of empty signal");
  fftw_plan plan = plan_cache().get(n);
  RealBuffer in(fftw_alloc_real(n));
  ComplexBuffer out(fftw_alloc_complex(n / 2 + 1));
  std::copy(x.begin(), x.end(), in.get());
  fftw_execute_dft_r2c(plan, in.get(), out.get());
  std::vector<double> mag(n / 2 + 1);
  for (std::size_t k = 0; k < mag.size(); ++k) mag[k] = std::hypot(out[k][0], out[k][1]);
  return mag;
}

std::size_t stft_frame_count(std::size_t num_samples, StftParams params) {
  require(params.window > 0 && params.hop > 0, Errc::invalid_argument,
          "stft window and hop must be positive");
  require(num_samples >= params.window, Errc::invalid_argument,
          "clip of " + std::to_string(num_samples) + " samples is shorter than the stft window (" +
              std::to_string(params.window) + ")");
  return 1 + (num_samples - params.window) / params.hop;
}

AudioClip fix_length(const AudioClip& clip, double target_seconds) {
  check_clip(clip);
  require(target_seconds > 0 && std::isfinite(target_seconds), Errc::invalid_argument,
          "target duration must be positive");
  const auto target = std::size_t(std::llround(target_seconds * clip.sample_rate));
  require(target > 0, Errc::invalid_argument, "target duration rounds to zero samples");

  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.samples.resize(target);
  const std::size_t len = clip.samples.size();
  for (std::size_t i = 0; i < target; ++i) out.samples[i] = clip.samples[i % len];
  return out;
}

Spectrogram stft_magnitude(const AudioClip& clip, StftParams params) {
  check_clip(clip);
  const std::size_t frames = stft_frame_count(clip.size(), params);
  const std::size_t bins = params.window / 2 + 1;
  const auto window = hann_window(params.window);

  fftw_plan plan = plan_cache().get(params.window);
  RealBuffer in(fftw_alloc_real(params.window));
  ComplexBuffer out(fftw_alloc_complex(bins));

  Spectrogram spec;
  spec.freq_bins = bins;
  spec.frames = frames;
  spec.values.resize(bins * frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const double* frame = clip.samples.data() + t * params.hop;
    for (std::size_t i = 0; i < params.window; ++i) in[i] = frame[i] * window[i];
    fftw_execute_dft_r2c(plan, in.get(), out.get());
    for (std::size_t f = 0; f < bins; ++f) spec.at(f, t) = std::hypot(out[f][0], out[f][1]);
  }
  return spec;
}

Spectrum utterance_spectrum(const AudioClip& clip) {
  check_clip(clip);
  Spectrum s;
  s.values = rfft_magnitude(clip.samples);
  const double scale = 1.0 / double(clip.size());
  for (double& v : s.values) v *= scale;
  return s;
}

}  // namespace msn::dsp
