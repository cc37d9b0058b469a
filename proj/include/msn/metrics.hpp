#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "msn/manifest.hpp"

namespace msn::metrics {

/// Scores with parallel labels, true = anomalous.
struct LabeledScores {
  std::vector<double> scores;
  std::vector<bool> labels;
  std::string group;

  void add(double score, bool anomalous) {
    scores.push_back(score);
    labels.push_back(anomalous);
  }
};

/// Fraction of (anomaly, normal) pairs where the anomaly scores higher; ties count half.
double auc(const LabeledScores& ls);

/// AUC of all anomalies against the floor(p * N-) highest-scoring normals. Normals
/// tied at the cut are taken in input order.
double pauc(const LabeledScores& ls, double p = 0.1);

enum class Aggregate { mean, harmonic };

Aggregate parse_aggregate(const std::string& s);
std::string to_string(Aggregate a);

double aggregate(std::span<const double> values, Aggregate kind);

struct GroupMetrics {
  std::string group;
  double auc = 0.0;
  double pauc = 0.0;
  std::size_t n_normal = 0;
  std::size_t n_anomaly = 0;
};

struct MetricReport {
  std::vector<GroupMetrics> groups;  // sorted by group key
  Aggregate kind = Aggregate::mean;
  double value = 0.0;  // aggregate over every group's AUC and pAUC together
};

struct ScoreEntry {
  std::string filename;
  double score = 0.0;
};

std::vector<ScoreEntry> read_score_csv(const std::filesystem::path& path);

/// Joins scores to the labeled test rows of `truth`. Every labeled test row needs a
/// score (matched by manifest path, then by file name); rows with unknown labels are skipped.
MetricReport evaluate(const std::vector<ScoreEntry>& scores, const data::Manifest& truth, data::Grouping grouping,
                      Aggregate kind, double p = 0.1);

/// group,auc,pauc,n_normal,n_anomaly then aggregate_<kind>,<value>,,,
void write_report_csv(const MetricReport& report, const std::filesystem::path& path);
void print_report(const MetricReport& report, std::ostream& out);

}  // namespace msn::metrics
