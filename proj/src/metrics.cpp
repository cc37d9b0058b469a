#include "msn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "msn/error.hpp"

namespace msn::metrics {
namespace {

void check(const LabeledScores& ls) {
  require(ls.scores.size() == ls.labels.size(), Errc::shape_mismatch, "scores and labels differ in length");
  for (double s : ls.scores) require(std::isfinite(s), Errc::non_finite, "non-finite score in group " + ls.group);
}

// Twice the Mann-Whitney count: 2 per won pair, 1 per tie.
double pair_auc(const std::vector<double>& pos, std::vector<double> neg) {
  require(!pos.empty() && !neg.empty(), Errc::invalid_argument, "AUC needs at least one anomaly and one normal");
  std::sort(neg.begin(), neg.end());
  std::uint64_t twice = 0;
  for (double s : pos) {
    const auto lo = std::lower_bound(neg.begin(), neg.end(), s);
    const auto hi = std::upper_bound(lo, neg.end(), s);
    twice += 2 * std::uint64_t(lo - neg.begin()) + std::uint64_t(hi - lo);
  }
  return double(twice) / (2.0 * double(pos.size()) * double(neg.size()));
}

void split(const LabeledScores& ls, std::vector<double>& pos, std::vector<double>& neg) {
  for (std::size_t i = 0; i < ls.scores.size(); ++i) (ls.labels[i] ? pos : neg).push_back(ls.scores[i]);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

double auc(const LabeledScores& ls) {
  check(ls);
  std::vector<double> pos, neg;
  split(ls, pos, neg);
  require(!pos.empty(), Errc::invalid_argument, "AUC: no anomalous samples in group " + ls.group);
  require(!neg.empty(), Errc::invalid_argument, "AUC: no normal samples in group " + ls.group);
  return pair_auc(pos, std::move(neg));
}

double pauc(const LabeledScores& ls, double p) {
  check(ls);
  require(p > 0.0 && p <= 1.0, Errc::invalid_argument, "pAUC: p must lie in (0, 1]");
  std::vector<double> pos, neg;
  split(ls, pos, neg);
  require(!pos.empty(), Errc::invalid_argument, "pAUC: no anomalous samples in group " + ls.group);
  const auto keep = std::size_t(std::floor(p * double(neg.size()) + 1e-9));
  require(keep >= 1, Errc::invalid_argument,
          "pAUC: " + std::to_string(neg.size()) + " normals are too few for p=" + fmt(p) + " in group " + ls.group);
  std::stable_sort(neg.begin(), neg.end(), [](double a, double b) { return a > b; });
  neg.resize(keep);
  return pair_auc(pos, std::move(neg));
}

Aggregate parse_aggregate(const std::string& s) {
  if (s == "mean") return Aggregate::mean;
  if (s == "harmonic") return Aggregate::harmonic;
  fail(Errc::config, "unknown aggregate '" + s + "' (expected mean or harmonic)");
}

std::string to_string(Aggregate a) { return a == Aggregate::mean ? "mean" : "harmonic"; }

double aggregate(std::span<const double> values, Aggregate kind) {
  require(!values.empty(), Errc::invalid_argument, "aggregate of an empty list");
  double sum = 0.0;
  for (double v : values) {
    require(std::isfinite(v) && v >= 0.0, Errc::invalid_argument, "aggregate values must be finite and non-negative");
    if (kind == Aggregate::harmonic) {
      require(v > 0.0, Errc::invalid_argument, "harmonic mean is undefined with a zero value");
      sum += 1.0 / v;
    } else {
      sum += v;
    }
  }
  const double n = double(values.size());
  return kind == Aggregate::mean ? sum / n : n / sum;
}

std::vector<ScoreEntry> read_score_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(bool(in), Errc::missing_file, "cannot open scores " + path.string());
  std::string line;
  require(bool(std::getline(in, line)), Errc::malformed_header, path.string() + ": empty score file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "filename,score", Errc::malformed_header, path.string() + ": expected header filename,score");
  std::vector<ScoreEntry> out;
  for (std::size_t n = 2; std::getline(in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    const std::string where = path.string() + ":" + std::to_string(n) + ": ";
    require(comma != std::string::npos && comma > 0, Errc::data, where + "expected filename,score");
    ScoreEntry e{line.substr(0, comma), 0.0};
    std::size_t used = 0;
    try {
      e.score = std::stod(line.substr(comma + 1), &used);
    } catch (const std::exception&) {
      used = 0;
    }
    require(used > 0 && used == line.size() - comma - 1, Errc::data, where + "bad score '" + line.substr(comma + 1) + "'");
    require(std::isfinite(e.score), Errc::data, where + "non-finite score");
    out.push_back(std::move(e));
  }
  return out;
}

MetricReport evaluate(const std::vector<ScoreEntry>& scores, const data::Manifest& truth, data::Grouping grouping,
                      Aggregate kind, double p) {
  std::unordered_map<std::string, double> by_path;
  std::unordered_map<std::string, std::vector<double>> by_name;
  for (const auto& e : scores) {
    require(by_path.emplace(e.filename, e.score).second, Errc::data, "duplicate score for " + e.filename);
    by_name[std::filesystem::path(e.filename).filename().string()].push_back(e.score);
  }

  std::map<std::string, LabeledScores> groups;
  for (const auto& r : truth.rows) {
    if (r.split != data::Split::test || r.label == data::Label::unknown) continue;
    double s = 0.0;
    if (auto it = by_path.find(r.path); it != by_path.end()) {
      s = it->second;
    } else {
      auto nt = by_name.find(std::filesystem::path(r.path).filename().string());
      require(nt != by_name.end() && nt->second.size() == 1, Errc::data, "no score for test file " + r.path);
      s = nt->second.front();
    }
    auto& g = groups[data::group_key(r, grouping)];
    g.group = data::group_key(r, grouping);
    g.add(s, r.label == data::Label::anomaly);
  }
  require(!groups.empty(), Errc::data, "truth manifest has no labeled test rows");

  MetricReport report;
  report.kind = kind;
  std::vector<double> pooled;
  for (const auto& [key, ls] : groups) {
    GroupMetrics g{key, 0.0, 0.0, 0, 0};
    for (bool a : ls.labels) ++(a ? g.n_anomaly : g.n_normal);
    require(g.n_anomaly > 0 && g.n_normal > 0, Errc::data, "group " + key + " needs both normal and anomalous test clips");
    g.auc = auc(ls);
    g.pauc = pauc(ls, p);
    pooled.push_back(g.auc);
    pooled.push_back(g.pauc);
    report.groups.push_back(g);
  }
  report.value = aggregate(pooled, kind);
  return report;
}

void write_report_csv(const MetricReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), Errc::io, "cannot write report " + path.string());
  out << "group,auc,pauc,n_normal,n_anomaly\n";
  for (const auto& g : report.groups)
    out << g.group << ',' << fmt(g.auc) << ',' << fmt(g.pauc) << ',' << g.n_normal << ',' << g.n_anomaly << '\n';
  out << "aggregate_" << to_string(report.kind) << ',' << fmt(report.value) << ",,,\n";
  require(bool(out), Errc::io, "failed writing report " + path.string());
}

void print_report(const MetricReport& report, std::ostream& out) {
  std::size_t width = 5;
  for (const auto& g : report.groups) width = std::max(width, g.group.size());
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %8s  %8s  %8s  %9s\n", int(width), "group", "AUC", "pAUC", "normal", "anomaly");
  out << buf;
  for (const auto& g : report.groups) {
    std::snprintf(buf, sizeof buf, "%-*s  %8.4f  %8.4f  %8zu  %9zu\n", int(width), g.group.c_str(), g.auc, g.pauc,
                  g.n_normal, g.n_anomaly);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%s of AUC and pAUC: %.4f\n", report.kind == Aggregate::mean ? "mean" : "harmonic mean",
                report.value);
  out << buf;
}

}  // namespace msn::metrics
