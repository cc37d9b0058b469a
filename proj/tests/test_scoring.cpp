#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <sstream>

#include "doctest.h"
#include "msn/container.hpp"
#include "msn/error.hpp"
#include "msn/scoring.hpp"
#include "tempdir.hpp"

using namespace msn;
using namespace msn::scoring;
using msn::testing::TempDir;

namespace {

std::vector<double> unit_rows(std::vector<double> x, std::size_t dim) {
  for (std::size_t i = 0; i < x.size() / dim; ++i) {
    double n = 0;
    for (std::size_t d = 0; d < dim; ++d) n += x[i * dim + d] * x[i * dim + d];
    for (std::size_t d = 0; d < dim; ++d) x[i * dim + d] /= std::sqrt(n);
  }
  return x;
}

// Exhaustive best partition of m unit-normalized points into exactly k non-empty groups.
double best_partition(const std::vector<double>& raw, std::size_t m, std::size_t dim, std::size_t k) {
  const std::vector<double> x = unit_rows(raw, dim);
  std::size_t total = 1;
  for (std::size_t i = 0; i < m; ++i) total *= k;
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> label(m);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t i = 0; i < m; ++i, c /= k) label[i] = c % k;
    double cost = 0;
    bool ok = true;
    for (std::size_t g = 0; g < k && ok; ++g) {
      std::vector<double> mean(dim, 0.0);
      std::size_t n = 0;
      for (std::size_t i = 0; i < m; ++i)
        if (label[i] == g) {
          ++n;
          for (std::size_t d = 0; d < dim; ++d) mean[d] += x[i * dim + d];
        }
      if (n == 0) {
        ok = false;
        break;
      }
      for (double& v : mean) v /= double(n);
      for (std::size_t i = 0; i < m; ++i)
        if (label[i] == g)
          for (std::size_t d = 0; d < dim; ++d) cost += (x[i * dim + d] - mean[d]) * (x[i * dim + d] - mean[d]);
    }
    if (ok) best = std::min(best, cost);
  }
  return best;
}

std::vector<double> random_points(std::size_t m, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(m * dim);
  for (double& x : v) x = g(rng);
  return v;
}

data::ManifestRow row(std::string path, std::string type, std::string id, std::string domain = "") {
  return {std::move(path), std::move(type), std::move(id), std::move(domain), data::Split::train, data::Label::normal};
}

EmbeddedRow embedded(data::ManifestRow r, std::vector<double> e) { return {std::move(r), std::move(e)}; }

}  // namespace

TEST_CASE("kmeans on a single point returns that point for any P") {
  const std::vector<double> p{3.0, 4.0};
  for (std::size_t k : {1, 2, 16}) {
    auto r = kmeans(p, 1, 2, k, 5);
    CHECK(r.k == 1);
    CHECK(r.centroids[0] == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(r.centroids[1] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(r.inertia == 0.0);
  }
}

TEST_CASE("kmeans with P = M has zero inertia") {
  std::mt19937_64 rng(1);
  for (std::size_t m : {2, 5, 9}) {
    auto pts = random_points(m, 4, rng);
    auto r = kmeans(pts, m, 4, m, 11);
    CHECK(r.k == m);
    CHECK(r.inertia == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("two separated clusters recover their normalized means") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> noise(0.0, 0.05);
  const std::size_t dim = 3;
  std::vector<double> pts;
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 10; ++i) {
      const double base[2][3] = {{1, 0, 0}, {0, 0, 1}};
      for (std::size_t d = 0; d < dim; ++d) pts.push_back(base[c][d] + noise(rng));
    }
  const auto x = unit_rows(pts, dim);
  std::vector<double> means[2];
  for (int c = 0; c < 2; ++c) {
    means[c].assign(dim, 0.0);
    for (int i = 0; i < 10; ++i)
      for (std::size_t d = 0; d < dim; ++d) means[c][d] += x[(c * 10 + i) * dim + d] / 10.0;
    means[c] = unit_rows(means[c], dim);
  }
  auto r = kmeans(pts, 20, dim, 2, 9);
  REQUIRE(r.k == 2);
  for (int c = 0; c < 2; ++c) {
    double best = 1e9;
    for (std::size_t j = 0; j < 2; ++j) {
      double err = 0;
      for (std::size_t d = 0; d < dim; ++d) err = std::max(err, std::abs(r.centroids[j * dim + d] - means[c][d]));
      best = std::min(best, err);
    }
    CHECK(best < 1e-6);
  }
  for (int i = 1; i < 10; ++i) CHECK(r.assignment[i] == r.assignment[0]);
  for (int i = 11; i < 20; ++i) CHECK(r.assignment[i] == r.assignment[10]);
  CHECK(r.assignment[0] != r.assignment[10]);
}

TEST_CASE("kmeans matches the exhaustive best partition at M = 6, P = 2") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = 3 + trial % 4;
    const std::size_t dim = 2 + trial % 3;
    auto pts = random_points(m, dim, rng);
    auto r = kmeans(pts, m, dim, 2, std::uint64_t(trial));
    CHECK(std::abs(r.inertia - best_partition(pts, m, dim, 2)) < 1e-9);
  }
}

TEST_CASE("Lloyd traces are non-increasing and bounded by the iteration cap") {
  std::mt19937_64 rng(23);
  auto pts = random_points(200, 8, rng);
  KMeansOptions opt;
  opt.restarts = 4;
  auto r = kmeans(pts, 200, 8, 16, 2, opt);
  REQUIRE(r.traces.size() == 4);
  for (const auto& t : r.traces) {
    CHECK(t.size() <= opt.max_iter + 1);
    for (std::size_t i = 1; i < t.size(); ++i) CHECK(t[i] <= t[i - 1] * (1 + 1e-12) + 1e-15);
  }
  double best = 1e300;
  for (const auto& t : r.traces) best = std::min(best, t.back());
  CHECK(r.inertia == best);
  for (std::size_t j = 0; j < r.k; ++j) {
    double n = 0;
    for (std::size_t d = 0; d < 8; ++d) n += r.centroids[j * 8 + d] * r.centroids[j * 8 + d];
    CHECK(n == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("kmeans handles duplicate points and is seed deterministic") {
  const std::vector<double> pts{1, 0, 1, 0, 1, 0, 0, 1};
  auto r = kmeans(pts, 4, 2, 3, 1);
  CHECK(r.k == 3);
  CHECK(r.inertia == doctest::Approx(0.0).epsilon(1e-12));
  std::mt19937_64 rng(8);
  auto p = random_points(50, 5, rng);
  CHECK(kmeans(p, 50, 5, 4, 77).centroids == kmeans(p, 50, 5, 4, 77).centroids);
}

TEST_CASE("kmeans input errors") {
  const std::vector<double> none;
  CHECK_THROWS_AS(kmeans(none, 0, 2, 1, 0), Error);
  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(kmeans(zero, 1, 2, 1, 0), Error);
  const std::vector<double> one{1.0, 0.0};
  CHECK_THROWS_AS(kmeans(one, 1, 2, 0, 0), Error);
}

TEST_CASE("cosine distance examples") {
  const std::vector<double> e1{1, 0}, e2{0, 1}, m1{-1, 0};
  CHECK(cosine_distance(e1, e1) == 0.0);
  CHECK(cosine_distance(e1, e2) == 1.0);
  CHECK(cosine_distance(e1, m1) == 2.0);
}

TEST_CASE("anomaly score is the minimum over every supplied centroid") {
  PrototypeSet s{"t", "", 2, {1, 0, 0, 1}};
  const std::vector<double> e2{0, 1};
  CHECK(anomaly_score(e2, {&s}) == 0.0);
  const std::vector<double> diag{1 / std::sqrt(2.0), 1 / std::sqrt(2.0)};
  CHECK(anomaly_score(diag, {&s}) == doctest::Approx(1 - 1 / std::sqrt(2.0)).epsilon(1e-12));

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = unit_rows(random_points(3, 6, rng), 6);
    auto b = unit_rows(random_points(2, 6, rng), 6);
    auto t = unit_rows(random_points(1, 6, rng), 6);
    PrototypeSet sa{"g", "source", 6, a}, sb{"g", "target", 6, b};
    const double only = anomaly_score(t, {&sa});
    const double both = anomaly_score(t, {&sa, &sb});
    CHECK(both <= only);
    CHECK(both >= 0.0);
    CHECK(both <= 2.0);
  }
  CHECK_THROWS_AS(anomaly_score(e2, {}), Error);
}

TEST_CASE("per-id grouping builds one set per type and id") {
  std::mt19937_64 rng(6);
  std::vector<EmbeddedRow> train;
  for (std::string type : {"fan", "pump"})
    for (std::string id : {"id_00", "id_02"})
      for (int i = 0; i < 5; ++i)
        train.push_back(embedded(row(type + id + std::to_string(i), type, id), random_points(1, 4, rng)));
  std::ostringstream warn;
  auto store = build_prototype_store(train, data::Grouping::per_id, 3, 1, {}, warn);
  REQUIRE(store.sets.size() == 4);
  CHECK(store.sets[0].group == "fan/id_00");
  CHECK(store.sets[3].group == "pump/id_02");
  for (const auto& s : store.sets) CHECK(s.count() == 3);
  CHECK(warn.str().empty());
}

TEST_CASE("per-type grouping splits source and target and reduces P") {
  std::mt19937_64 rng(7);
  std::vector<EmbeddedRow> train;
  for (int i = 0; i < 40; ++i) train.push_back(embedded(row("s" + std::to_string(i), "valve", "a", "source"), random_points(1, 4, rng)));
  for (int i = 0; i < 10; ++i) train.push_back(embedded(row("t" + std::to_string(i), "valve", "b", "target"), random_points(1, 4, rng)));
  std::ostringstream warn;
  auto store = build_prototype_store(train, data::Grouping::per_type, 16, 1, {}, warn);
  REQUIRE(store.sets.size() == 2);
  CHECK(store.sets[0].domain == "source");
  CHECK(store.sets[0].count() == 16);
  CHECK(store.sets[1].domain == "target");
  CHECK(store.sets[1].count() == 10);
  CHECK(store.sets_for("valve").size() == 2);
  CHECK(warn.str().empty());

  std::vector<EmbeddedRow> source_only(train.begin(), train.begin() + 40);
  auto s2 = build_prototype_store(source_only, data::Grouping::per_type, 4, 1, {}, warn);
  CHECK(s2.sets.size() == 1);
  CHECK(warn.str().find("valve") != std::string::npos);
}

TEST_CASE("prototype store round trip and score CSV") {
  TempDir dir("scoring");
  std::mt19937_64 rng(9);
  std::vector<EmbeddedRow> train;
  for (int i = 0; i < 12; ++i) train.push_back(embedded(row("n" + std::to_string(i), "fan", "id_00"), random_points(1, 5, rng)));
  std::ostringstream warn;
  auto store = build_prototype_store(train, data::Grouping::per_id, 4, 3, {}, warn);
  store.save(dir / "protos.msn");
  auto back = PrototypeStore::load(dir / "protos.msn");
  CHECK(back.grouping == store.grouping);
  CHECK(back.dim == 5);
  REQUIRE(back.sets.size() == 1);
  CHECK(back.sets[0].group == "fan/id_00");
  CHECK(back.sets[0].centroids == store.sets[0].centroids);
  CHECK_THROWS_AS(load_container(dir / "protos.msn", "checkpoint"), Error);

  std::vector<EmbeddedRow> test{embedded(row("a.wav", "fan", "id_00"), unit_rows(random_points(1, 5, rng), 5)),
                                embedded(row("b.wav", "pump", "id_00"), unit_rows(random_points(1, 5, rng), 5)),
                                embedded(row("c.wav", "fan", "id_00"), unit_rows(random_points(1, 5, rng), 5))};
  auto table = score_rows(test, back);
  REQUIRE(table.rows.size() == 2);
  CHECK(table.rows[0].filename == "a.wav");
  CHECK(table.rows[1].filename == "c.wav");
  REQUIRE(table.errors.size() == 1);
  CHECK(table.errors[0].find("pump/id_00") != std::string::npos);

  write_score_csv(table, dir / "scores.csv");
  std::ifstream in(dir / "scores.csv");
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "filename,score");
  std::getline(in, line);
  char expect[64];
  std::snprintf(expect, sizeof expect, "a.wav,%.6f", table.rows[0].score);
  CHECK(line == expect);
}

TEST_CASE("training clips score no worse than their own prototypes allow") {
  std::mt19937_64 rng(12);
  std::vector<EmbeddedRow> train;
  for (int i = 0; i < 30; ++i) train.push_back(embedded(row("n" + std::to_string(i), "fan", "id_00"), random_points(1, 6, rng)));
  std::ostringstream warn;
  auto store = build_prototype_store(train, data::Grouping::per_id, 30, 1, {}, warn);
  for (auto& r : train) r.embedding = unit_rows(r.embedding, 6);
  for (const auto& s : score_rows(train, store).rows) CHECK(s.score == doctest::Approx(0.0).epsilon(1e-12));
}
