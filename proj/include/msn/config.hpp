#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "msn/network.hpp"
#include "msn/synth.hpp"
#include "msn/training.hpp"

namespace msn {

using Entries = std::vector<std::pair<std::string, std::string>>;

/// Flat key=value view of a model configuration; values round-trip exactly.
Entries model_entries(const net::ModelConfig& cfg);
/// Returns false for a key that is not a model key; throws Errc::config on a bad value.
bool set_model_entry(net::ModelConfig& cfg, const std::string& key, const std::string& value);

Entries train_entries(const train::TrainConfig& cfg);
bool set_train_entry(train::TrainConfig& cfg, const std::string& key, const std::string& value);

/// Everything a subcommand may need, merged from one config file plus overrides.
struct RunConfig {
  net::ModelConfig model;
  train::TrainConfig train;
  data::SynthConfig synth;
  std::size_t prototypes = 16;
  std::size_t kmeans_restarts = 10;
  std::string grouping = "per-id";
  std::uint64_t seed = 0;
  bool has_seed = false;

  /// Cross-field checks; throws Errc::config.
  void validate() const;
  /// Every key with its current value, in a stable order.
  Entries entries() const;
};

/// Parses "key = value" lines; '#' starts a comment. Throws Errc::config with
/// the line number on malformed lines.
Entries parse_entries(const std::string& text, const std::string& origin);

/// Applies one key. `preset` (default | micro) resets the model section; `seed`
/// seeds the model, training, synthesis and clustering. Unknown keys throw.
void apply_entry(RunConfig& cfg, const std::string& key, const std::string& value);

/// File entries with `preset` applied first, then overrides ("key=value") in
/// order. The result must carry a seed and pass validate().
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides);

}  // namespace msn
