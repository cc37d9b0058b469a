#include "msn/network.hpp"

#include <cmath>

#include "msn/error.hpp"

namespace msn::net {
namespace {

std::string pair_str(std::size_t a, std::size_t b) {
  return "(" + std::to_string(a) + "," + std::to_string(b) + ")";
}

}  // namespace

// ------------------------------------------------------------------ frontend

std::size_t FrontendConfig::num_samples() const {
  return std::size_t(std::llround(clip_seconds * double(sample_rate)));
}

std::size_t FrontendConfig::frames() const {
  const std::size_t n = num_samples();
  return n < stft.window ? 0 : 1 + (n - stft.window) / stft.hop;
}

Features extract_features(const dsp::AudioClip& clip, const FrontendConfig& frontend) {
  require(clip.sample_rate == frontend.sample_rate, Errc::data,
          "clip sample rate " + std::to_string(clip.sample_rate) + " Hz differs from configured " +
              std::to_string(frontend.sample_rate) + " Hz");
  dsp::AudioClip fixed = dsp::fix_length(clip, frontend.clip_seconds);
  return {dsp::stft_magnitude(fixed, frontend.stft), dsp::utterance_spectrum(fixed)};
}

// -------------------------------------------------------------------- config

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.frontend = {8000, 1.0, {256, 128}};
  c.stem_channels = 4;
  c.stage_channels = {8, 16, 32, 64};
  c.kernels = {{16, 8}, {32, 8}, {32, 16}};
  c.patch_channels = {8, 16, 16};
  c.patch_hidden = 256;
  c.patch_embed = 64;
  c.msn_embed = 64;
  c.spectrum_channels = 32;
  c.spectrum_kernels = {64, 16, 8};
  c.spectrum_strides = {16, 8, 2};
  c.spectrum_width = 32;
  return c;
}

std::size_t ModelConfig::embedding_dim() const {
  return (stage_channels.empty() ? 0 : stage_channels.back()) + msn_embed + spectrum_width;
}

void ModelConfig::validate() const {
  auto check = [](bool ok, const std::string& what) { require(ok, Errc::config, what); };
  check(frontend.sample_rate > 0, "sample_rate must be positive");
  check(frontend.clip_seconds > 0, "clip_seconds must be positive");
  check(frontend.stft.window >= 2 && frontend.stft.hop >= 1, "stft window/hop invalid");
  check(frontend.num_samples() >= frontend.stft.window, "clip shorter than the stft window");
  check(stem_channels >= 1 && !stage_channels.empty(), "spectrogram encoder widths invalid");
  for (std::size_t c : stage_channels) check(c >= 1, "stage channels must be >= 1");
  check(se_reduction >= 1, "se_reduction must be >= 1");
  check(!patch_channels.empty(), "patch_channels must not be empty");
  for (std::size_t c : patch_channels) check(c >= 1, "patch channels must be >= 1");
  check(patch_hidden >= 1 && patch_embed >= 1 && msn_embed >= 1, "embedding sizes must be >= 1");
  check(spectrum_channels >= 1 && spectrum_width >= 1 && spectrum_layers >= 1, "spectrum encoder widths invalid");
  check(!spectrum_kernels.empty() && spectrum_kernels.size() == spectrum_strides.size(),
        "spectrum kernels and strides must have equal, non-zero length");
  for (std::size_t s : spectrum_strides) check(s >= 1, "spectrum strides must be >= 1");
  check(scan.f_step >= 1 && scan.t_step >= 1 && scan.n_f >= 1 && scan.n_t >= 1, "scan settings must be >= 1");
  check(!kernels.empty(), "kernel list is empty");
  check(!scanner::usable_kernels(kernels, frontend.freq_bins(), frontend.frames(), false).empty(),
        "no kernel fits the " + std::to_string(frontend.freq_bins()) + "x" + std::to_string(frontend.frames()) +
            " spectrogram");
  SpectrumEncoder::conv_lengths(*this, frontend.spectrum_bins());
}

// -------------------------------------------------------------------- layers

Conv::Conv(std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, ad::Conv2dOptions o, bool with_bias,
           std::mt19937_64& rng)
    : weight(ad::he_normal({out, in, kh, kw}, in * kh * kw, rng)), opt(o) {
  if (with_bias) bias = ad::Tensor::zeros({out}, true);
}

void Conv::collect(std::vector<ad::Parameter>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  if (bias.defined()) out.push_back({prefix + ".bias", bias});
}

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(ad::he_normal({out, in}, in, rng)), bias(ad::Tensor::zeros({out}, true)) {}

void Linear::collect(std::vector<ad::Parameter>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Norm::Norm(std::size_t channels)
    : gamma(ad::Tensor::full({channels}, 1.0, true)),
      beta(ad::Tensor::zeros({channels}, true)),
      state{std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)} {}

ad::Tensor Norm::operator()(const ad::Tensor& x, bool training) const {
  return ad::batch_norm(x, gamma, beta, state, training);
}

void Norm::collect(std::vector<ad::Parameter>& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma});
  out.push_back({prefix + ".beta", beta});
}

void Norm::collect_buffers(std::vector<ad::Buffer>& out, const std::string& prefix) {
  out.push_back({prefix + ".running_mean", &state.running_mean});
  out.push_back({prefix + ".running_var", &state.running_var});
}

ResBlock::ResBlock(std::size_t in, std::size_t out, std::size_t stride, std::mt19937_64& rng)
    : conv1_(in, out, 3, 3, {stride, stride, 1, 1}, false, rng),
      conv2_(out, out, 3, 3, {1, 1, 1, 1}, false, rng),
      norm1_(out),
      norm2_(out),
      has_proj_(stride != 1 || in != out) {
  if (has_proj_) {
    proj_ = Conv(in, out, 1, 1, {stride, stride, 0, 0}, false, rng);
    proj_norm_ = Norm(out);
  }
}

ad::Tensor ResBlock::forward(const ad::Tensor& x, bool training) const {
  ad::Tensor h = ad::relu(norm1_(conv1_(x), training));
  h = norm2_(conv2_(h), training);
  ad::Tensor skip = has_proj_ ? proj_norm_(proj_(x), training) : x;
  return ad::relu(ad::add(h, skip));
}

void ResBlock::collect(std::vector<ad::Parameter>& out, const std::string& prefix) const {
  conv1_.collect(out, prefix + ".conv1");
  norm1_.collect(out, prefix + ".norm1");
  conv2_.collect(out, prefix + ".conv2");
  norm2_.collect(out, prefix + ".norm2");
  if (has_proj_) {
    proj_.collect(out, prefix + ".proj");
    proj_norm_.collect(out, prefix + ".proj_norm");
  }
}

void ResBlock::collect_buffers(std::vector<ad::Buffer>& out, const std::string& prefix) {
  norm1_.collect_buffers(out, prefix + ".norm1");
  norm2_.collect_buffers(out, prefix + ".norm2");
  if (has_proj_) proj_norm_.collect_buffers(out, prefix + ".proj_norm");
}

ModifiedSE::ModifiedSE(std::size_t channels, std::size_t reduction, std::mt19937_64& rng) {
  const std::size_t hidden = std::max<std::size_t>(1, channels / reduction);
  auto make = [&](std::size_t out) {
    return Gate{Conv(channels, hidden, 1, 1, {}, true, rng), Conv(hidden, out, 1, 1, {}, true, rng)};
  };
  channel_ = make(channels);
  freq_ = make(1);
  time_ = make(1);
}

ad::Tensor ModifiedSE::gate(const Gate& g, const ad::Tensor& descriptor) const {
  return ad::sigmoid(g.excite(ad::silu(g.squeeze(descriptor))));
}

ad::Tensor ModifiedSE::forward(const ad::Tensor& x) const {
  ad::Tensor y = ad::mul_broadcast(x, gate(channel_, ad::mean_axes(x, {2, 3})));
  y = ad::mul_broadcast(y, gate(freq_, ad::mean_axes(y, {3})));
  return ad::mul_broadcast(y, gate(time_, ad::mean_axes(y, {2})));
}

void ModifiedSE::collect(std::vector<ad::Parameter>& out, const std::string& prefix) const {
  const std::pair<const Gate*, const char*> gates[] = {{&channel_, ".channel"}, {&freq_, ".freq"}, {&time_, ".time"}};
  for (const auto& [g, name] : gates) {
    g->squeeze.collect(out, prefix + name + ".squeeze");
    g->excite.collect(out, prefix + name + ".excite");
  }
}

void ModifiedSE::saturate_gates() {
  for (Gate* g : {&channel_, &freq_, &time_}) {
    std::fill(g->excite.weight.values().begin(), g->excite.weight.values().end(), 0.0);
    std::fill(g->excite.bias.values().begin(), g->excite.bias.values().end(), 50.0);
  }
}

// ------------------------------------------------------- spectrogram encoder

SpectrogramEncoder::SpectrogramEncoder(const ModelConfig& cfg, std::mt19937_64& rng, std::vector<LayerRow>& table)
    : input_se_(1, cfg.se_reduction, rng),
      stem_se_(cfg.stem_channels, cfg.se_reduction, rng),
      stem_(1, cfg.stem_channels, 7, 7, {2, 2, 3, 3}, false, rng),
      stem_norm_(cfg.stem_channels) {
  const std::string sec = "spectrogram";
  table.push_back({sec, "Modified SE", "-", "-", "-"});
  table.push_back({sec, "Conv2d", std::to_string(cfg.stem_channels), "(7,7)", "(2,2)"});
  table.push_back({sec, "MaxPooling", "-", "(3,3)", "(2,2)"});
  table.push_back({sec, "Modified SE", "-", "-", "-"});

  std::vector<std::pair<std::size_t, std::size_t>> widths{{cfg.stem_channels, 1}};
  for (std::size_t c : cfg.stage_channels) widths.emplace_back(c, 2);
  std::size_t in = cfg.stem_channels;
  for (auto [c, stride] : widths) {
    Stage s{ResBlock(in, c, stride, rng), ModifiedSE(c, cfg.se_reduction, rng), ResBlock(c, c, 1, rng)};
    stages_.push_back(std::move(s));
    table.push_back({sec, "ResNet Block", std::to_string(c), "(3,3)", pair_str(stride, stride)});
    table.push_back({sec, "Modified SE", "-", "-", "-"});
    table.push_back({sec, "ResNet Block", std::to_string(c), "(3,3)", "(1,1)"});
    in = c;
  }
  table.push_back({sec, "MaxPooling", "-", "(h,w)", "(h,w)"});
}

ad::Tensor SpectrogramEncoder::forward(const ad::Tensor& x, bool training) const {
  ad::Tensor h = input_se_.forward(x);
  h = ad::relu(stem_norm_(stem_(h), training));
  h = ad::max_pool2d(h, {3, 3, 2, 2, 1, 1});
  h = stem_se_.forward(h);
  for (const Stage& s : stages_) {
    h = s.first.forward(h, training);
    h = s.se.forward(h);
    h = s.second.forward(h, training);
  }
  return ad::global_max_pool2d(h);
}

std::vector<std::pair<std::size_t, std::size_t>> SpectrogramEncoder::trace_shapes(const ad::Tensor& x) const {
  ad::NoGradGuard guard;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  ad::Tensor h = ad::relu(stem_norm_(stem_(input_se_.forward(x)), false));
  out.emplace_back(h.dim(2), h.dim(3));
  h = stem_se_.forward(ad::max_pool2d(h, {3, 3, 2, 2, 1, 1}));
  out.emplace_back(h.dim(2), h.dim(3));
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    h = stages_[i].second.forward(stages_[i].se.forward(stages_[i].first.forward(h, false)), false);
    if (i > 0) out.emplace_back(h.dim(2), h.dim(3));
  }
  return out;
}

void SpectrogramEncoder::collect(std::vector<ad::Parameter>& out, const std::string& prefix) const {
  input_se_.collect(out, prefix + ".se_in");
  stem_.collect(out, prefix + ".stem");
  stem_norm_.collect(out, prefix + ".stem_norm");
  stem_se_.collect(out, prefix + ".se_stem");
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string p = prefix + ".stage" + std::to_string(i);
    stages_[i].first.collect(out, p + ".block0");
    stages_[i].se.collect(out, p + ".se");
    stages_[i].second.collect(out, p + ".block1");
  }
}

void SpectrogramEncoder::collect_buffers(std::vector<ad::Buffer>& out, const std::string& prefix) {
  stem_norm_.collect_buffers(out, prefix + ".stem_norm");
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string p = prefix + ".stage" + std::to_string(i);
    stages_[i].first.collect_buffers(out, p + ".block0");
    stages_[i].second.collect_buffers(out, p + ".block1");
  }
}

std::vector<ModifiedSE*> SpectrogramEncoder::se_modules() {
  std::vector<ModifiedSE*> out{&input_se_, &stem_se_};
  for (Stage& s : stages_) out.push_back(&s.se);
  return out;
}

// ------------------------------------------------------------- patch encoder

PatchEncoder::PatchEncoder(const ModelConfig& cfg, std::mt19937_64& rng, std::vector<LayerRow>& table) {
  std::size_t in = 1;
  for (std::size_t i = 0; i < cfg.patch_channels.size(); ++i) {
    // the first two blocks halve the patch, later ones keep it
    const std::size_t stride = i < 2 ? 2 : 1;
    blocks_.emplace_back(in, cfg.patch_channels[i], stride, rng);
    table.push_back({"patch", "ResNet block", std::to_string(cfg.patch_channels[i]), "(3,3)", pair_str(stride, stride)});
    in = cfg.patch_channels[i];
  }
  table.push_back({"patch", "StatsPool", "-", "-", "-"});
  hidden_ = Linear(2 * in, cfg.patch_hidden, rng);
  table.push_back({"patch", "Linear", std::to_string(cfg.patch_hidden), "-", "-"});
  out_ = Linear(cfg.patch_hidden, cfg.patch_embed, rng);
  table.push_back({"patch", "Linear", std::to_string(cfg.patch_embed), "-", "-"});
}

ad::Tensor PatchEncoder::forward(const ad::Tensor& patches, std::size_t patches_per_clip, bool training) const {
  require(patches.defined() && patches.numel() > 0, Errc::invalid_argument, "empty patch stack");
  ad::Tensor h = patches;
  for (const ResBlock& b : blocks_) h = b.forward(h, training);
  h = ad::stats_pool(h, patches_per_clip);
  return out_(ad::relu(hidden_(h)));
}

void PatchEncoder::collect(std::vector<ad::Parameter>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
  hidden_.collect(out, prefix + ".hidden");
  out_.collect(out, prefix + ".out");
}

void PatchEncoder::collect_buffers(std::vector<ad::Buffer>& out, const std::string& prefix) {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect_buffers(out, prefix + ".block" + std::to_string(i));
}

// ---------------------------------------------------------------- MSN branch

MsnBranch::MsnBranch(const ModelConfig& cfg, std::mt19937_64& rng, std::vector<LayerRow>& table)
    : kernels_(scanner::usable_kernels(cfg.kernels, cfg.frontend.freq_bins(), cfg.frontend.frames())),
      encoder_(cfg, rng, table) {
  require(!kernels_.empty(), Errc::config, "no kernel box fits the spectrogram");
  for (const auto& k : kernels_)
    plans_.push_back(scanner::make_plan(cfg.frontend.freq_bins(), cfg.frontend.frames(), k, cfg.scan));
  fuse_ = Linear(kernels_.size() * cfg.patch_embed, cfg.msn_embed, rng);
  table.push_back({"msn", "Linear", std::to_string(cfg.msn_embed), "-", "-"});
}

std::vector<ad::Tensor> MsnBranch::patch_tensors(std::span<const dsp::Spectrogram> specs) const {
  std::vector<ad::Tensor> out;
  for (std::size_t k = 0; k < kernels_.size(); ++k) {
    const auto& box = kernels_[k];
    const std::size_t n = plans_[k].count();
    std::vector<double> values;
    values.reserve(specs.size() * n * box.h * box.w);
    for (const auto& s : specs) {
      scanner::PatchStack stack = scanner::scan(s, box, plans_[k]);
      values.insert(values.end(), stack.values.begin(), stack.values.end());
    }
    out.push_back(ad::Tensor::from({specs.size() * n, 1, box.h, box.w}, std::move(values)));
  }
  return out;
}

ad::Tensor MsnBranch::forward_patches(const std::vector<ad::Tensor>& patches, std::size_t batch, bool training) const {
  require(patches.size() == kernels_.size(), Errc::shape_mismatch, "one patch tensor per kernel expected");
  std::vector<ad::Tensor> per_kernel;
  for (const ad::Tensor& p : patches) per_kernel.push_back(encoder_.forward(p, p.dim(0) / batch, training));
  return ad::relu(fuse_(ad::concat_features(per_kernel)));
}

ad::Tensor MsnBranch::forward(std::span<const dsp::Spectrogram> specs, bool training) const {
  return forward_patches(patch_tensors(specs), specs.size(), training);
}

void MsnBranch::collect(std::vector<ad::Parameter>& out, const std::string& prefix) const {
  encoder_.collect(out, prefix + ".patch");
  fuse_.collect(out, prefix + ".fuse");
}

void MsnBranch::collect_buffers(std::vector<ad::Buffer>& out, const std::string& prefix) {
  encoder_.collect_buffers(out, prefix + ".patch");
}

// ---------------------------------------------------------- spectrum encoder

std::vector<std::size_t> SpectrumEncoder::conv_lengths(const ModelConfig& cfg, std::size_t bins) {
  std::vector<std::size_t> lengths;
  std::size_t len = bins;
  for (std::size_t i = 0; i < cfg.spectrum_kernels.size(); ++i) {
    const std::size_t k = cfg.spectrum_kernels[i];
    require(k <= len, Errc::config,
            "spectrum Conv1d #" + std::to_string(i + 1) + " kernel " + std::to_string(k) + " exceeds its input length " +
                std::to_string(len));
    len = (len - k) / cfg.spectrum_strides[i] + 1;
    lengths.push_back(len);
  }
  return lengths;
}

SpectrumEncoder::SpectrumEncoder(const ModelConfig& cfg, std::mt19937_64& rng, std::vector<LayerRow>& table)
    : strides_(cfg.spectrum_strides) {
  const auto lengths = conv_lengths(cfg, cfg.frontend.spectrum_bins());
  std::size_t in = 1;
  for (std::size_t i = 0; i < cfg.spectrum_kernels.size(); ++i) {
    const std::size_t k = cfg.spectrum_kernels[i];
    convs_.emplace_back(in, cfg.spectrum_channels, 1, k, ad::Conv2dOptions{1, cfg.spectrum_strides[i], 0, 0}, true, rng);
    table.push_back({"spectrum", "Conv1d", std::to_string(cfg.spectrum_channels), std::to_string(k),
                     std::to_string(cfg.spectrum_strides[i])});
    in = cfg.spectrum_channels;
  }
  table.push_back({"spectrum", "flatten", "-", "-", "-"});
  std::size_t width = cfg.spectrum_channels * lengths.back();
  for (std::size_t i = 0; i < cfg.spectrum_layers; ++i) {
    linears_.emplace_back(width, cfg.spectrum_width, rng);
    table.push_back({"spectrum", "Linear", std::to_string(cfg.spectrum_width), "-", "-"});
    width = cfg.spectrum_width;
  }
}

ad::Tensor SpectrumEncoder::forward(const ad::Tensor& x) const {
  ad::Tensor h = x;
  for (const Conv& c : convs_) {
    const ad::Tensor w3 = ad::reshape(c.weight, {c.weight.dim(0), c.weight.dim(1), c.weight.dim(3)});
    h = ad::relu(ad::conv1d(h, w3, c.bias, c.opt.stride_w));
  }
  h = ad::reshape(h, {h.dim(0), h.dim(1) * h.dim(2)});
  for (std::size_t i = 0; i < linears_.size(); ++i) {
    h = linears_[i](h);
    if (i + 1 < linears_.size()) h = ad::relu(h);
  }
  return h;
}

void SpectrumEncoder::collect(std::vector<ad::Parameter>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(out, prefix + ".conv" + std::to_string(i));
  for (std::size_t i = 0; i < linears_.size(); ++i) linears_[i].collect(out, prefix + ".linear" + std::to_string(i));
}

// --------------------------------------------------------------------- model

ad::Tensor spectrogram_batch(std::span<const Features> batch) {
  require(!batch.empty(), Errc::invalid_argument, "empty batch");
  const std::size_t F = batch[0].spectrogram.freq_bins, T = batch[0].spectrogram.frames;
  std::vector<double> v;
  v.reserve(batch.size() * F * T);
  for (const Features& f : batch) {
    require(f.spectrogram.freq_bins == F && f.spectrogram.frames == T, Errc::shape_mismatch,
            "spectrogram sizes differ within a batch");
    v.insert(v.end(), f.spectrogram.values.begin(), f.spectrogram.values.end());
  }
  return ad::Tensor::from({batch.size(), 1, F, T}, std::move(v));
}

ad::Tensor spectrum_batch(std::span<const Features> batch) {
  require(!batch.empty(), Errc::invalid_argument, "empty batch");
  const std::size_t L = batch[0].spectrum.size();
  std::vector<double> v;
  v.reserve(batch.size() * L);
  for (const Features& f : batch) {
    require(f.spectrum.size() == L, Errc::shape_mismatch, "spectrum lengths differ within a batch");
    v.insert(v.end(), f.spectrum.values.begin(), f.spectrum.values.end());
  }
  return ad::Tensor::from({batch.size(), 1, L}, std::move(v));
}

MsnModel::MsnModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  spectrogram_ = SpectrogramEncoder(cfg_, rng, table_);
  spectrum_ = SpectrumEncoder(cfg_, rng, table_);
  msn_ = MsnBranch(cfg_, rng, table_);
}

std::vector<ad::Tensor> MsnModel::branch_outputs(std::span<const Features> batch, bool training) const {
  std::vector<dsp::Spectrogram> specs;
  specs.reserve(batch.size());
  for (const Features& f : batch) {
    require(f.spectrogram.freq_bins == cfg_.frontend.freq_bins() && f.spectrogram.frames == cfg_.frontend.frames(),
            Errc::shape_mismatch, "features do not match the model's frontend configuration");
    specs.push_back(f.spectrogram);
  }
  return {spectrogram_.forward(spectrogram_batch(batch), training), msn_.forward(specs, training),
          spectrum_.forward(spectrum_batch(batch))};
}

ad::Tensor MsnModel::forward(std::span<const Features> batch, bool training) const {
  return ad::l2_normalize_rows(ad::concat_features(branch_outputs(batch, training)));
}

std::vector<std::vector<double>> MsnModel::embed(std::span<const Features> batch) const {
  ad::NoGradGuard guard;
  ad::Tensor e = forward(batch, false);
  const std::size_t D = e.dim(1);
  std::vector<std::vector<double>> rows(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b)
    rows[b].assign(e.data().begin() + long(b * D), e.data().begin() + long((b + 1) * D));
  return rows;
}

std::vector<ad::Parameter> MsnModel::parameters() const {
  std::vector<ad::Parameter> out;
  spectrogram_.collect(out, "spectrogram");
  msn_.collect(out, "msn");
  spectrum_.collect(out, "spectrum");
  return out;
}

std::vector<ad::Buffer> MsnModel::buffers() {
  std::vector<ad::Buffer> out;
  spectrogram_.collect_buffers(out, "spectrogram");
  msn_.collect_buffers(out, "msn");
  return out;
}

}  // namespace msn::net
