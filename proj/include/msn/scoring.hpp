#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "msn/manifest.hpp"

namespace msn::scoring {

struct KMeansOptions {
  std::size_t max_iter = 100;
  double tol = 1e-6;  // stop when the relative inertia change falls below this
  std::size_t restarts = 10;  // best final inertia wins
};

struct KMeansResult {
  std::size_t k = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;  // k x dim, unit rows
  double inertia = 0.0;  // sum of squared distances before the final renormalization
  std::vector<std::size_t> assignment;
  std::vector<std::vector<double>> traces;  // inertia per Lloyd iteration, one list per restart
};

/// Lloyd's algorithm with k-means++ seeding on unit-normalized rows of `points`
/// (m x dim). k is reduced to m when m < k. Throws Errc::runtime if inertia ever
/// increases between iterations.
KMeansResult kmeans(std::span<const double> points, std::size_t m, std::size_t dim, std::size_t k,
                    std::uint64_t seed, const KMeansOptions& opt = {});

/// Sum of squared distances from unit-normalized points to their nearest centroid.
double inertia(std::span<const double> points, std::size_t m, std::size_t dim, std::span<const double> centroids);

double cosine_distance(std::span<const double> a, std::span<const double> b);

struct PrototypeSet {
  std::string group;
  std::string domain;  // "source", "target" or empty
  std::size_t dim = 0;
  std::vector<double> centroids;  // count() x dim, unit rows

  std::size_t count() const { return dim == 0 ? 0 : centroids.size() / dim; }
};

/// Minimum cosine distance to any centroid of any of the sets.
double anomaly_score(std::span<const double> embedding, const std::vector<const PrototypeSet*>& sets);

class PrototypeStore {
 public:
  data::Grouping grouping = data::Grouping::per_id;
  std::size_t dim = 0;
  std::vector<PrototypeSet> sets;  // sorted by (group, domain)

  /// Every set of a group (source and target together for domain-tagged data).
  std::vector<const PrototypeSet*> sets_for(const std::string& group) const;

  void save(const std::filesystem::path& path) const;
  static PrototypeStore load(const std::filesystem::path& path);
};

/// One embedded manifest row.
struct EmbeddedRow {
  data::ManifestRow row;
  std::vector<double> embedding;
};

/// K-Means prototypes per group, with separate source/target sets when rows carry
/// domain tags. Warns on `warnings` when a domain-tagged group has no target rows.
PrototypeStore build_prototype_store(const std::vector<EmbeddedRow>& train, data::Grouping grouping, std::size_t p,
                                     std::uint64_t seed, const KMeansOptions& opt, std::ostream& warnings);

struct ScoreRow {
  std::string filename;
  double score = 0.0;
};

struct ScoreTable {
  std::vector<ScoreRow> rows;  // input order
  std::vector<std::string> errors;  // rows whose group has no prototypes
};

ScoreTable score_rows(const std::vector<EmbeddedRow>& test, const PrototypeStore& store);

/// Header filename,score; six decimals.
void write_score_csv(const ScoreTable& table, const std::filesystem::path& path);

}  // namespace msn::scoring
