#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "msn/autodiff/ops.hpp"
#include "msn/autodiff/optim.hpp"
#include "msn/dsp.hpp"
#include "msn/scanner.hpp"

namespace msn::net {

/// Audio conditioning shared by training, embedding and scoring.
struct FrontendConfig {
  int sample_rate = 16000;
  double clip_seconds = 10.0;
  dsp::StftParams stft{1024, 512};

  std::size_t num_samples() const;
  std::size_t freq_bins() const { return stft.window / 2 + 1; }
  std::size_t frames() const;
  std::size_t spectrum_bins() const { return num_samples() / 2 + 1; }
};

struct Features {
  dsp::Spectrogram spectrogram;
  dsp::Spectrum spectrum;
};

/// fix_length, then STFT magnitude and utterance spectrum. The clip's rate must
/// match the frontend's.
Features extract_features(const dsp::AudioClip& clip, const FrontendConfig& frontend);

struct ModelConfig {
  FrontendConfig frontend;

  // spectrogram ResNet
  std::size_t stem_channels = 16;
  std::vector<std::size_t> stage_channels = {32, 64, 128, 256};
  std::size_t se_reduction = 8;

  // multi-scale scanning branch
  std::vector<scanner::KernelBox> kernels = scanner::default_kernel_set();
  scanner::ScanSettings scan;
  std::vector<std::size_t> patch_channels = {32, 64, 64};
  std::size_t patch_hidden = 1024;
  std::size_t patch_embed = 256;
  std::size_t msn_embed = 256;

  // utterance spectrum encoder
  std::size_t spectrum_channels = 128;
  std::vector<std::size_t> spectrum_kernels = {256, 64, 32};
  std::vector<std::size_t> spectrum_strides = {64, 32, 4};
  std::size_t spectrum_width = 128;
  std::size_t spectrum_layers = 5;

  std::uint64_t seed = 0;

  /// Desk-scale variant: 8 kHz / 1 s clips, kernels {16x8, 32x8, 32x16},
  /// channel widths quartered.
  static ModelConfig micro();

  std::size_t embedding_dim() const;
  /// Throws Errc::config when the geometry cannot be built.
  void validate() const;
};

/// One row of the architecture dump: operator, output channels/dims, kernel, stride.
struct LayerRow {
  std::string section;
  std::string op;
  std::string channels;
  std::string kernel;
  std::string stride;
};

/// Conv with optional bias; He-initialized.
struct Conv {
  ad::Tensor weight, bias;
  ad::Conv2dOptions opt;

  Conv() = default;
  Conv(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, ad::Conv2dOptions o, bool with_bias,
       std::mt19937_64& rng);
  ad::Tensor operator()(const ad::Tensor& x) const { return ad::conv2d(x, weight, bias, opt); }
  void collect(std::vector<ad::Parameter>& out, const std::string& prefix) const;
};

struct Linear {
  ad::Tensor weight, bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);
  ad::Tensor operator()(const ad::Tensor& x) const { return ad::linear(x, weight, bias); }
  void collect(std::vector<ad::Parameter>& out, const std::string& prefix) const;
};

/// Batch normalization. Running statistics change only in training mode.
struct Norm {
  ad::Tensor gamma, beta;
  mutable ad::BatchNormState state;

  Norm() = default;
  explicit Norm(std::size_t channels);
  ad::Tensor operator()(const ad::Tensor& x, bool training) const;
  void collect(std::vector<ad::Parameter>& out, const std::string& prefix) const;
  void collect_buffers(std::vector<ad::Buffer>& out, const std::string& prefix);
};

/// conv3x3 -> norm -> relu -> conv3x3 -> norm, plus a 1x1 projection shortcut when
/// the stride or width changes; relu after the sum.
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(std::size_t in, std::size_t out, std::size_t stride, std::mt19937_64& rng);

  ad::Tensor forward(const ad::Tensor& x, bool training) const;
  void collect(std::vector<ad::Parameter>& out, const std::string& prefix) const;
  void collect_buffers(std::vector<ad::Buffer>& out, const std::string& prefix);

 private:
  Conv conv1_, conv2_, proj_;
  Norm norm1_, norm2_, proj_norm_;
  bool has_proj_ = false;
};

/// Squeeze-and-excitation gating along channels, then frequency, then time.
///
/// Each gate squeezes x by averaging over the other spatial axes and runs a
/// two-layer 1x1 bottleneck (C -> max(1, C / r) -> silu -> C or 1 -> sigmoid):
///   channel   mean over (H, W)  -> (B, C, 1, 1)
///   frequency mean over W       -> (B, 1, H, 1)
///   time      mean over H       -> (B, 1, 1, W)
/// The bottleneck mixes channels with shared weights, so the parameter count
/// does not depend on H or W. SiLU rather than relu: a one-unit bottleneck fed
/// non-negative descriptors would otherwise be switched off for good.
class ModifiedSE {
 public:
  ModifiedSE() = default;
  ModifiedSE(std::size_t channels, std::size_t reduction, std::mt19937_64& rng);

  ad::Tensor forward(const ad::Tensor& x) const;
  void collect(std::vector<ad::Parameter>& out, const std::string& prefix) const;

  /// Saturates every gate to 1 (test hook for the identity property).
  void saturate_gates();

 private:
  struct Gate {
    Conv squeeze, excite;
  };
  ad::Tensor gate(const Gate& g, const ad::Tensor& descriptor) const;

  Gate channel_, freq_, time_;
};

/// ResNet with SE modules over the whole spectrogram; global max pool at the end.
class SpectrogramEncoder {
 public:
  SpectrogramEncoder() = default;
  SpectrogramEncoder(const ModelConfig& cfg, std::mt19937_64& rng, std::vector<LayerRow>& table);

  /// x (B, 1, F, T) -> (B, stage_channels.back()).
  ad::Tensor forward(const ad::Tensor& x, bool training) const;
  /// Spatial sizes after the stem, the pool and each stage (for shape tests).
  std::vector<std::pair<std::size_t, std::size_t>> trace_shapes(const ad::Tensor& x) const;

  void collect(std::vector<ad::Parameter>& out, const std::string& prefix) const;
  void collect_buffers(std::vector<ad::Buffer>& out, const std::string& prefix);
  std::vector<ModifiedSE*> se_modules();

 private:
  struct Stage {
    ResBlock first;
    ModifiedSE se;
    ResBlock second;
  };
  ModifiedSE input_se_, stem_se_;
  Conv stem_;
  Norm stem_norm_;
  std::vector<Stage> stages_;
};

/// Shared encoder for patch stacks: three residual blocks, statistics pooling
/// over patches and positions, then two linear layers.
class PatchEncoder {
 public:
  PatchEncoder() = default;
  PatchEncoder(const ModelConfig& cfg, std::mt19937_64& rng, std::vector<LayerRow>& table);

  /// patches (B * N, 1, h, w) -> (B, patch_embed).
  ad::Tensor forward(const ad::Tensor& patches, std::size_t patches_per_clip, bool training) const;
  void collect(std::vector<ad::Parameter>& out, const std::string& prefix) const;
  void collect_buffers(std::vector<ad::Buffer>& out, const std::string& prefix);

 private:
  std::vector<ResBlock> blocks_;
  Linear hidden_, out_;
};

/// Scans every kernel, encodes each stack with one shared PatchEncoder,
/// concatenates the K embeddings and projects them with linear + relu.
class MsnBranch {
 public:
  MsnBranch() = default;
  MsnBranch(const ModelConfig& cfg, std::mt19937_64& rng, std::vector<LayerRow>& table);

  ad::Tensor forward(std::span<const dsp::Spectrogram> specs, bool training) const;
  /// Per-kernel patch tensors (B * N_k, 1, h, w) for a batch.
  std::vector<ad::Tensor> patch_tensors(std::span<const dsp::Spectrogram> specs) const;
  ad::Tensor forward_patches(const std::vector<ad::Tensor>& patches, std::size_t batch, bool training) const;

  const std::vector<scanner::KernelBox>& kernels() const { return kernels_; }
  const std::vector<scanner::ScanPlan>& plans() const { return plans_; }
  const PatchEncoder& patch_encoder() const { return encoder_; }
  PatchEncoder& patch_encoder() { return encoder_; }
  Linear& fuse() { return fuse_; }

  void collect(std::vector<ad::Parameter>& out, const std::string& prefix) const;
  void collect_buffers(std::vector<ad::Buffer>& out, const std::string& prefix);

 private:
  std::vector<scanner::KernelBox> kernels_;
  std::vector<scanner::ScanPlan> plans_;
  PatchEncoder encoder_;
  Linear fuse_;
};

/// Strided Conv1d stack over the utterance spectrum followed by a linear stack.
class SpectrumEncoder {
 public:
  SpectrumEncoder() = default;
  SpectrumEncoder(const ModelConfig& cfg, std::mt19937_64& rng, std::vector<LayerRow>& table);

  /// x (B, 1, F') -> (B, spectrum_width).
  ad::Tensor forward(const ad::Tensor& x) const;
  void collect(std::vector<ad::Parameter>& out, const std::string& prefix) const;

  /// Lengths after each Conv1d for an input of `bins`; throws Errc::config when
  /// a kernel outgrows its input.
  static std::vector<std::size_t> conv_lengths(const ModelConfig& cfg, std::size_t bins);

 private:
  std::vector<Conv> convs_;
  std::vector<Linear> linears_;
  std::vector<std::size_t> strides_;
};

/// The full dual-path model producing unit-norm embeddings.
class MsnModel {
 public:
  explicit MsnModel(const ModelConfig& cfg);

  /// (B, embedding_dim) rows of unit L2 norm.
  ad::Tensor forward(std::span<const Features> batch, bool training) const;
  /// Unnormalized branch outputs, in concatenation order.
  std::vector<ad::Tensor> branch_outputs(std::span<const Features> batch, bool training) const;

  /// Eval-mode embeddings without recording a graph. Safe to call concurrently.
  std::vector<std::vector<double>> embed(std::span<const Features> batch) const;

  const ModelConfig& config() const { return cfg_; }
  std::size_t embedding_dim() const { return cfg_.embedding_dim(); }
  const std::vector<LayerRow>& architecture() const { return table_; }

  std::vector<ad::Parameter> parameters() const;
  std::vector<ad::Buffer> buffers();

  SpectrogramEncoder& spectrogram_encoder() { return spectrogram_; }
  MsnBranch& msn_branch() { return msn_; }
  SpectrumEncoder& spectrum_encoder() { return spectrum_; }
  const MsnBranch& msn_branch() const { return msn_; }

 private:
  ModelConfig cfg_;
  std::vector<LayerRow> table_;
  SpectrogramEncoder spectrogram_;
  MsnBranch msn_;
  SpectrumEncoder spectrum_;
};

ad::Tensor spectrogram_batch(std::span<const Features> batch);
ad::Tensor spectrum_batch(std::span<const Features> batch);

}  // namespace msn::net
