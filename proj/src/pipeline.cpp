#include "msn/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <ostream>

#include "msn/container.hpp"
#include "msn/dsp.hpp"
#include "msn/error.hpp"
#include "msn/parallel.hpp"
#include "msn/synth.hpp"
#include "msn/training.hpp"

namespace msn::pipeline {
namespace {

std::string index_str(std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<scoring::EmbeddedRow> embed_manifest(const data::Manifest& manifest, const net::MsnModel& model,
                                                 std::size_t chunk) {
  require(chunk >= 1, Errc::invalid_argument, "embed chunk must be >= 1");
  const std::size_t n = manifest.size();
  std::vector<scoring::EmbeddedRow> out(n);
  const std::size_t chunks = (n + chunk - 1) / chunk;
  parallel_for(chunks, [&](std::size_t c) {
    const std::size_t lo = c * chunk, hi = std::min(n, lo + chunk);
    std::vector<net::Features> feats;
    for (std::size_t i = lo; i < hi; ++i)
      feats.push_back(net::extract_features(dsp::load_wav(manifest.resolve(manifest.rows[i])),
                                            model.config().frontend));
    auto emb = model.embed(feats);
    for (std::size_t i = lo; i < hi; ++i) out[i] = {manifest.rows[i], std::move(emb[i - lo])};
  });
  return out;
}

void save_embeddings(const std::vector<scoring::EmbeddedRow>& rows, const std::filesystem::path& path) {
  Container c;
  c.kind = "embeddings";
  const std::size_t dim = rows.empty() ? 0 : rows.front().embedding.size();
  c.meta["rows"] = std::to_string(rows.size());
  c.meta["dim"] = std::to_string(dim);
  std::vector<double> all;
  all.reserve(rows.size() * dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i].row;
    require(rows[i].embedding.size() == dim, Errc::shape_mismatch, "embedding dimensions differ");
    const std::string k = "row." + index_str(i) + ".";
    c.meta[k + "path"] = r.path;
    c.meta[k + "type"] = r.type;
    c.meta[k + "id"] = r.id;
    c.meta[k + "domain"] = r.domain;
    c.meta[k + "split"] = data::to_string(r.split);
    c.meta[k + "label"] = data::to_string(r.label);
    all.insert(all.end(), rows[i].embedding.begin(), rows[i].embedding.end());
  }
  c.add("embeddings", {rows.size(), dim}, std::move(all));
  save_container(path, c);
}

std::vector<scoring::EmbeddedRow> load_embeddings(const std::filesystem::path& path) {
  const Container c = load_container(path, "embeddings");
  const std::size_t n = std::stoul(c.meta_at("rows")), dim = std::stoul(c.meta_at("dim"));
  const NamedArray& a = c.at("embeddings");
  require(a.data.size() == n * dim, Errc::data, path.string() + ": embedding array does not match its row count");
  std::vector<scoring::EmbeddedRow> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string k = "row." + index_str(i) + ".";
    out[i].row = {c.meta_at(k + "path"), c.meta_at(k + "type"), c.meta_at(k + "id"), c.meta_at(k + "domain"),
                  data::parse_split(c.meta_at(k + "split")), data::parse_label(c.meta_at(k + "label"))};
    out[i].embedding.assign(a.data.begin() + long(i * dim), a.data.begin() + long((i + 1) * dim));
  }
  return out;
}

scoring::PrototypeStore build_store(const std::vector<scoring::EmbeddedRow>& train, const RunConfig& cfg,
                                    std::ostream& warnings) {
  scoring::KMeansOptions opt;
  opt.restarts = cfg.kmeans_restarts;
  return scoring::build_prototype_store(train, data::parse_grouping(cfg.grouping), cfg.prototypes, cfg.seed, opt,
                                        warnings);
}

ExperimentResult run_synth_experiment(const RunConfig& cfg, const std::filesystem::path& work_dir, std::ostream& log) {
  const auto t0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(work_dir);
  const data::Manifest manifest = data::synth_dataset(cfg.synth, work_dir);

  const auto t_train = std::chrono::steady_clock::now();
  train::Trainer trainer = train::train(manifest, cfg.model, cfg.train, work_dir / "train_log.csv", log);
  ExperimentResult res;
  res.train_seconds = seconds_since(t_train);
  trainer.save(work_dir / "checkpoint.msn");

  const auto train_emb = embed_manifest(manifest.select(data::Split::train), trainer.model());
  const auto store = build_store(train_emb, cfg, log);
  store.save(work_dir / "prototypes.msn");
  data::Manifest test = manifest.select(data::Split::test);
  const auto table = scoring::score_rows(embed_manifest(test, trainer.model()), store);
  require(table.errors.empty(), Errc::data, "unscored test rows: " + (table.errors.empty() ? "" : table.errors[0]));
  scoring::write_score_csv(table, work_dir / "scores.csv");

  std::vector<metrics::ScoreEntry> scores;
  for (const auto& r : table.rows) scores.push_back({r.filename, r.score});
  res.report = metrics::evaluate(scores, manifest, data::parse_grouping(cfg.grouping), metrics::Aggregate::mean);
  metrics::write_report_csv(res.report, work_dir / "report.csv");
  for (const auto& g : res.report.groups) res.mean_auc += g.auc / double(res.report.groups.size());
  res.total_seconds = seconds_since(t0);
  return res;
}

}  // namespace msn::pipeline
