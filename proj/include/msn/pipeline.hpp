#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "msn/config.hpp"
#include "msn/manifest.hpp"
#include "msn/metrics.hpp"
#include "msn/network.hpp"
#include "msn/scoring.hpp"

namespace msn::pipeline {

/// Eval-mode embeddings of every row, in row order. Clips are decoded and
/// embedded in chunks of `chunk` rows spread over the worker threads.
std::vector<scoring::EmbeddedRow> embed_manifest(const data::Manifest& manifest, const net::MsnModel& model,
                                                 std::size_t chunk = 16);

/// Container kind "embeddings": one n x D array plus the manifest fields of each row.
void save_embeddings(const std::vector<scoring::EmbeddedRow>& rows, const std::filesystem::path& path);
std::vector<scoring::EmbeddedRow> load_embeddings(const std::filesystem::path& path);

scoring::PrototypeStore build_store(const std::vector<scoring::EmbeddedRow>& train, const RunConfig& cfg,
                                    std::ostream& warnings);

struct ExperimentResult {
  metrics::MetricReport report;  // per-id, mean aggregation
  double mean_auc = 0.0;  // mean of the per-group AUCs
  double train_seconds = 0.0;
  double total_seconds = 0.0;
};

/// synth -> train -> prototypes -> score -> evaluate inside `work_dir`, leaving
/// manifest.csv, checkpoint.msn, prototypes.msn, scores.csv and report.csv there.
ExperimentResult run_synth_experiment(const RunConfig& cfg, const std::filesystem::path& work_dir, std::ostream& log);

}  // namespace msn::pipeline
