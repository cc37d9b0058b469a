#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msn/config.hpp"
#include "msn/error.hpp"
#include "msn/manifest.hpp"
#include "msn/metrics.hpp"
#include "msn/parallel.hpp"
#include "msn/pipeline.hpp"
#include "msn/scanner.hpp"
#include "msn/synth.hpp"
#include "msn/training.hpp"

namespace fs = std::filesystem;
using namespace msn;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", path, "run configuration file")->required();
    cmd->add_option("--set", overrides, "override a config key (key=value), repeatable");
  }
  RunConfig load() const { return load_run_config(path, overrides); }
};

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

data::Manifest load_checked(const std::string& path) {
  data::Manifest m = data::load_manifest(path);
  m.validate();
  return m;
}

int cmd_synth(const ConfigArgs& ca, const std::string& out) {
  const RunConfig cfg = ca.load();
  const data::Manifest m = data::synth_dataset(cfg.synth, out);
  std::cout << "wrote " << m.size() << " clips and " << (fs::path(out) / "manifest.csv").string() << "\n";
  return 0;
}

int cmd_train(const ConfigArgs& ca, const std::string& manifest, const std::string& out, const std::string& log_csv) {
  const RunConfig cfg = ca.load();
  const data::Manifest m = load_checked(manifest);
  ensure_parent(out);
  if (!log_csv.empty()) ensure_parent(log_csv);
  train::Trainer t = train::train(m, cfg.model, cfg.train, log_csv, std::cout);
  t.save(out);
  std::cout << "wrote " << out << "\n";
  return 0;
}

int cmd_embed(const std::string& checkpoint, const std::string& manifest, const std::string& split,
              const std::string& out) {
  require(split == "train" || split == "test" || split == "all", Errc::config, "--split must be train, test or all");
  data::Manifest m = load_checked(manifest);
  if (split != "all") m = m.select(data::parse_split(split));
  const train::Trainer t = train::Trainer::load(checkpoint);
  ensure_parent(out);
  pipeline::save_embeddings(pipeline::embed_manifest(m, t.model()), out);
  std::cout << "wrote " << m.size() << " embeddings to " << out << "\n";
  return 0;
}

int cmd_score(const ConfigArgs& ca, const std::string& checkpoint, const std::string& manifest,
              const std::string& store_in, const std::string& store_out, const std::string& out) {
  const RunConfig cfg = ca.load();
  const data::Manifest m = load_checked(manifest);
  const train::Trainer t = train::Trainer::load(checkpoint);

  scoring::PrototypeStore store;
  if (!store_in.empty()) {
    store = scoring::PrototypeStore::load(store_in);
    require(store.grouping == data::parse_grouping(cfg.grouping), Errc::config,
            "prototype store grouping differs from the configured grouping");
  } else {
    const auto train_rows = pipeline::embed_manifest(m.select(data::Split::train), t.model());
    store = pipeline::build_store(train_rows, cfg, std::cerr);
  }
  if (!store_out.empty()) {
    ensure_parent(store_out);
    store.save(store_out);
  }
  const auto table = scoring::score_rows(pipeline::embed_manifest(m.select(data::Split::test), t.model()), store);
  ensure_parent(out);
  scoring::write_score_csv(table, out);
  std::cout << "wrote " << table.rows.size() << " scores to " << out << "\n";
  if (!table.errors.empty()) {
    std::cerr << "unscored rows (" << table.errors.size() << "):\n";
    for (const auto& e : table.errors) std::cerr << "  " << e << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& scores, const std::string& truth, const std::string& grouping,
             const std::string& aggregate, double p, const std::string& out) {
  const auto g = data::parse_grouping(grouping);
  const auto kind = metrics::parse_aggregate(aggregate);
  const auto report = metrics::evaluate(metrics::read_score_csv(scores), data::load_manifest(truth), g, kind, p);
  if (!out.empty()) {
    ensure_parent(out);
    metrics::write_report_csv(report, out);
  }
  metrics::print_report(report, std::cout);
  return 0;
}

int cmd_manifest(const std::string& root, const std::string& style, const std::string& out) {
  require(style == "2020" || style == "2023", Errc::config, "--style must be 2020 or 2023");
  const auto m =
      data::scan_dcase_layout(root, style == "2020" ? data::DcaseStyle::y2020 : data::DcaseStyle::y2023, std::cerr);
  ensure_parent(out);
  data::save_manifest(m, out);
  std::cout << "wrote " << m.size() << " rows to " << out << "\n";
  return 0;
}

int cmd_scan_analyze(std::size_t F, std::size_t T, const std::string& kernels, const std::string& mode,
                     scanner::ScanSettings settings) {
  require(mode == "step" || mode == "count", Errc::config, "--mode must be step or count");
  settings.mode = mode == "step" ? scanner::ScanMode::step : scanner::ScanMode::count;
  const auto boxes = kernels.empty() ? scanner::default_kernel_set() : scanner::parse_kernel_list(kernels);
  std::cout << "kernel,n_f,n_t,patches,min_coverage,max_coverage,patch_bytes\n";
  for (const auto& r : scanner::analyze(F, T, boxes, settings))
    std::cout << r.box.str() << ',' << r.n_f << ',' << r.n_t << ',' << r.patches << ',' << r.min_coverage << ','
              << r.max_coverage << ',' << r.patch_bytes << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale scanning network for machine anomalous sound detection"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "worker thread cap (0 = hardware concurrency)");

  ConfigArgs synth_cfg, train_cfg, score_cfg;
  std::string out, manifest, log_csv, checkpoint, split = "all", store_in, store_out;
  std::string scores, truth, grouping = "per-id", aggregate = "mean", kernels, mode = "step";
  double p = 0.1;
  std::size_t F = 0, T = 0;
  std::string root, style = "2020";
  scanner::ScanSettings scan;

  auto* synth = app.add_subcommand("synth", "write the synthetic machine corpus and its manifest");
  synth_cfg.attach(synth);
  synth->add_option("--out", out, "output directory")->required();

  auto* trn = app.add_subcommand("train", "train a model on the normal training rows of a manifest");
  train_cfg.attach(trn);
  trn->add_option("--manifest", manifest, "manifest CSV")->required();
  trn->add_option("--out", out, "checkpoint path")->required();
  trn->add_option("--log", log_csv, "per-epoch CSV log");

  auto* emb = app.add_subcommand("embed", "write embeddings of manifest rows");
  emb->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  emb->add_option("--manifest", manifest, "manifest CSV")->required();
  emb->add_option("--split", split, "train, test or all");
  emb->add_option("--out", out, "embedding container path")->required();

  auto* score = app.add_subcommand("score", "build prototypes from training rows and score test rows");
  score_cfg.attach(score);
  score->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  score->add_option("--manifest", manifest, "manifest CSV with train and test rows")->required();
  score->add_option("--prototypes", store_in, "reuse a saved prototype store");
  score->add_option("--save-prototypes", store_out, "write the prototype store here");
  score->add_option("--out", out, "score CSV path")->required();

  auto* ev = app.add_subcommand("eval", "AUC and pAUC per group from a score CSV");
  ev->add_option("--scores", scores, "score CSV")->required();
  ev->add_option("--truth", truth, "truth manifest")->required();
  ev->add_option("--grouping", grouping, "per-id or per-type");
  ev->add_option("--aggregate", aggregate, "mean or harmonic");
  ev->add_option("--p", p, "pAUC false-positive range");
  ev->add_option("--out", out, "report CSV path");

  auto* mf = app.add_subcommand("manifest", "index a DCASE-style <root>/<type>/{train,test} directory tree");
  mf->add_option("--root", root, "dataset root")->required();
  mf->add_option("--style", style, "file naming: 2020 or 2023");
  mf->add_option("--out", out, "manifest CSV path")->required();

  auto* sa = app.add_subcommand("scan-analyze", "patch counts and coverage per kernel");
  sa->add_option("--F", F, "frequency bins")->required();
  sa->add_option("--T", T, "frames")->required();
  sa->add_option("--kernels", kernels, "comma-separated HxW list (default: the 12-kernel set)");
  sa->add_option("--mode", mode, "step or count");
  sa->add_option("--f-step", scan.f_step);
  sa->add_option("--t-step", scan.t_step);
  sa->add_option("--n-f", scan.n_f);
  sa->add_option("--n-t", scan.n_t);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return exit_code_for(Errc::config);
  }

  try {
    if (threads > 0) set_max_threads(threads);
    if (*synth) return cmd_synth(synth_cfg, out);
    if (*trn) return cmd_train(train_cfg, manifest, out, log_csv);
    if (*emb) return cmd_embed(checkpoint, manifest, split, out);
    if (*score) return cmd_score(score_cfg, checkpoint, manifest, store_in, store_out, out);
    if (*ev) return cmd_eval(scores, truth, grouping, aggregate, p, out);
    if (*mf) return cmd_manifest(root, style, out);
    if (*sa) return cmd_scan_analyze(F, T, kernels, mode, scan);
  } catch (const Error& e) {
    std::cerr << "error: " << errc_name(e.code()) << ": " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: runtime: " << e.what() << "\n";
    return exit_code_for(Errc::runtime);
  }
  return 0;
}
