#include "msn/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <type_traits>

#include "msn/error.hpp"

namespace msn {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto [ptr, ec] = std::from_chars(value.data(), end, out);
  require(ec == std::errc() && ptr == end && !value.empty(), Errc::config,
          "bad value for " + key + ": '" + value + "'");
  return out;
}

std::size_t parse_size(const std::string& key, const std::string& v) { return parse_number<std::size_t>(key, v); }
double parse_double(const std::string& key, const std::string& v) { return parse_number<double>(key, v); }

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(trim(item));
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(v)) out.push_back(parse_size(key, s));
  require(!out.empty(), Errc::config, key + " must not be empty");
  return out;
}

std::vector<double> parse_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  if (v.empty()) return out;
  for (const auto& s : split_list(v)) out.push_back(parse_double(key, s));
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>)
      out += fmt(xs[i]);
    else
      out += std::to_string(xs[i]);
  }
  return out;
}

std::string kernels_str(const std::vector<scanner::KernelBox>& ks) {
  std::string out;
  for (std::size_t i = 0; i < ks.size(); ++i) out += (i ? "," : "") + ks[i].str();
  return out;
}

}  // namespace

Entries model_entries(const net::ModelConfig& c) {
  return {{"sample_rate", std::to_string(c.frontend.sample_rate)},
          {"clip_seconds", fmt(c.frontend.clip_seconds)},
          {"stft_window", std::to_string(c.frontend.stft.window)},
          {"stft_hop", std::to_string(c.frontend.stft.hop)},
          {"stem_channels", std::to_string(c.stem_channels)},
          {"stage_channels", join(c.stage_channels)},
          {"se_reduction", std::to_string(c.se_reduction)},
          {"kernels", kernels_str(c.kernels)},
          {"scan_mode", c.scan.mode == scanner::ScanMode::step ? "step" : "count"},
          {"f_step", std::to_string(c.scan.f_step)},
          {"t_step", std::to_string(c.scan.t_step)},
          {"n_f", std::to_string(c.scan.n_f)},
          {"n_t", std::to_string(c.scan.n_t)},
          {"patch_channels", join(c.patch_channels)},
          {"patch_hidden", std::to_string(c.patch_hidden)},
          {"patch_embed", std::to_string(c.patch_embed)},
          {"msn_embed", std::to_string(c.msn_embed)},
          {"spectrum_channels", std::to_string(c.spectrum_channels)},
          {"spectrum_kernels", join(c.spectrum_kernels)},
          {"spectrum_strides", join(c.spectrum_strides)},
          {"spectrum_width", std::to_string(c.spectrum_width)},
          {"spectrum_layers", std::to_string(c.spectrum_layers)},
          {"seed", std::to_string(c.seed)}};
}

bool set_model_entry(net::ModelConfig& c, const std::string& k, const std::string& v) {
  if (k == "sample_rate") c.frontend.sample_rate = parse_number<int>(k, v);
  else if (k == "clip_seconds") c.frontend.clip_seconds = parse_double(k, v);
  else if (k == "stft_window") c.frontend.stft.window = parse_size(k, v);
  else if (k == "stft_hop") c.frontend.stft.hop = parse_size(k, v);
  else if (k == "stem_channels") c.stem_channels = parse_size(k, v);
  else if (k == "stage_channels") c.stage_channels = parse_sizes(k, v);
  else if (k == "se_reduction") c.se_reduction = parse_size(k, v);
  else if (k == "kernels") c.kernels = scanner::parse_kernel_list(v);
  else if (k == "scan_mode") {
    require(v == "step" || v == "count", Errc::config, "scan_mode must be step or count");
    c.scan.mode = v == "step" ? scanner::ScanMode::step : scanner::ScanMode::count;
  } else if (k == "f_step") c.scan.f_step = parse_size(k, v);
  else if (k == "t_step") c.scan.t_step = parse_size(k, v);
  else if (k == "n_f") c.scan.n_f = parse_size(k, v);
  else if (k == "n_t") c.scan.n_t = parse_size(k, v);
  else if (k == "patch_channels") c.patch_channels = parse_sizes(k, v);
  else if (k == "patch_hidden") c.patch_hidden = parse_size(k, v);
  else if (k == "patch_embed") c.patch_embed = parse_size(k, v);
  else if (k == "msn_embed") c.msn_embed = parse_size(k, v);
  else if (k == "spectrum_channels") c.spectrum_channels = parse_size(k, v);
  else if (k == "spectrum_kernels") c.spectrum_kernels = parse_sizes(k, v);
  else if (k == "spectrum_strides") c.spectrum_strides = parse_sizes(k, v);
  else if (k == "spectrum_width") c.spectrum_width = parse_size(k, v);
  else if (k == "spectrum_layers") c.spectrum_layers = parse_size(k, v);
  else if (k == "seed") c.seed = parse_number<std::uint64_t>(k, v);
  else return false;
  return true;
}

Entries train_entries(const train::TrainConfig& c) {
  return {{"lr", fmt(c.lr)},
          {"batch", std::to_string(c.batch)},
          {"epochs", std::to_string(c.epochs)},
          {"mixup_alpha", fmt(c.mixup_alpha)},
          {"mixup_prob", fmt(c.mixup_prob)},
          {"smoothing_max", fmt(c.smoothing_max)},
          {"sub_clusters", std::to_string(c.sub_clusters)},
          {"seed", std::to_string(c.seed)}};
}

bool set_train_entry(train::TrainConfig& c, const std::string& k, const std::string& v) {
  if (k == "lr") c.lr = parse_double(k, v);
  else if (k == "batch") c.batch = parse_size(k, v);
  else if (k == "epochs") c.epochs = parse_size(k, v);
  else if (k == "mixup_alpha") c.mixup_alpha = parse_double(k, v);
  else if (k == "mixup_prob") c.mixup_prob = parse_double(k, v);
  else if (k == "smoothing_max") c.smoothing_max = parse_double(k, v);
  else if (k == "sub_clusters") c.sub_clusters = parse_size(k, v);
  else if (k == "seed") c.seed = parse_number<std::uint64_t>(k, v);
  else return false;
  return true;
}

void RunConfig::validate() const {
  require(has_seed, Errc::config, "seed is required");
  model.validate();
  train.validate();
  synth.validate();
  require(prototypes >= 1, Errc::config, "prototypes must be >= 1");
  require(kmeans_restarts >= 1, Errc::config, "kmeans_restarts must be >= 1");
  require(grouping == "per-id" || grouping == "per-type", Errc::config, "grouping must be per-id or per-type");
}

Entries RunConfig::entries() const {
  Entries out{{"seed", std::to_string(seed)}};
  for (auto& e : model_entries(model))
    if (e.first != "seed") out.push_back(e);
  for (auto& e : train_entries(train))
    if (e.first != "seed") out.push_back(e);
  out.insert(out.end(), {{"prototypes", std::to_string(prototypes)},
                         {"kmeans_restarts", std::to_string(kmeans_restarts)},
                         {"grouping", grouping},
                         {"synth_classes", std::to_string(synth.classes)},
                         {"synth_train_per_class", std::to_string(synth.train_per_class)},
                         {"synth_test_normal", std::to_string(synth.test_normal_per_class)},
                         {"synth_test_anomaly", std::to_string(synth.test_anomaly_per_class)},
                         {"synth_seconds", fmt(synth.seconds)},
                         {"synth_sample_rate", std::to_string(synth.sample_rate)},
                         {"synth_base_freqs", join(synth.base_freqs)},
                         {"synth_f0", fmt(synth.f0_start)},
                         {"synth_f0_ratio", fmt(synth.f0_ratio)},
                         {"synth_anomaly", data::to_string(synth.anomaly)},
                         {"synth_detune", fmt(synth.detune)},
                         {"synth_noise", fmt(synth.noise_floor)},
                         {"synth_type", synth.machine_type}});
  return out;
}

Entries parse_entries(const std::string& text, const std::string& origin) {
  Entries out;
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos && eq > 0, Errc::config,
            origin + ":" + std::to_string(lineno) + ": expected key = value");
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

void apply_entry(RunConfig& c, const std::string& k, const std::string& v) {
  if (k == "preset") {
    require(v == "default" || v == "micro", Errc::config, "preset must be default or micro");
    const std::uint64_t seed = c.model.seed;
    c.model = v == "micro" ? net::ModelConfig::micro() : net::ModelConfig{};
    c.model.seed = seed;
  } else if (k == "seed") {
    c.seed = parse_number<std::uint64_t>(k, v);
    c.has_seed = true;
    c.model.seed = c.train.seed = c.synth.seed = c.seed;
  } else if (set_model_entry(c.model, k, v) || set_train_entry(c.train, k, v)) {
  } else if (k == "prototypes") c.prototypes = parse_size(k, v);
  else if (k == "kmeans_restarts") c.kmeans_restarts = parse_size(k, v);
  else if (k == "grouping") c.grouping = v;
  else if (k == "synth_classes") c.synth.classes = parse_size(k, v);
  else if (k == "synth_train_per_class") c.synth.train_per_class = parse_size(k, v);
  else if (k == "synth_test_normal") c.synth.test_normal_per_class = parse_size(k, v);
  else if (k == "synth_test_anomaly") c.synth.test_anomaly_per_class = parse_size(k, v);
  else if (k == "synth_seconds") c.synth.seconds = parse_double(k, v);
  else if (k == "synth_sample_rate") c.synth.sample_rate = parse_number<int>(k, v);
  else if (k == "synth_base_freqs") c.synth.base_freqs = parse_doubles(k, v);
  else if (k == "synth_f0") c.synth.f0_start = parse_double(k, v);
  else if (k == "synth_f0_ratio") c.synth.f0_ratio = parse_double(k, v);
  else if (k == "synth_anomaly") c.synth.anomaly = data::parse_anomaly_kind(v);
  else if (k == "synth_detune") c.synth.detune = parse_double(k, v);
  else if (k == "synth_noise") c.synth.noise_floor = parse_double(k, v);
  else if (k == "synth_type") c.synth.machine_type = v;
  else fail(Errc::config, "unknown config key '" + k + "'");
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  require(bool(in), Errc::config, "cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Entries entries = parse_entries(ss.str(), path.string());
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    require(eq != std::string::npos && eq > 0, Errc::config, "override must be key=value: " + o);
    entries.emplace_back(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
  }
  RunConfig cfg;
  // the last preset wins and is applied before any other key
  for (auto it = entries.rbegin(); it != entries.rend(); ++it)
    if (it->first == "preset") {
      apply_entry(cfg, it->first, it->second);
      break;
    }
  for (const auto& [k, v] : entries)
    if (k != "preset") apply_entry(cfg, k, v);
  cfg.validate();
  return cfg;
}

}  // namespace msn
