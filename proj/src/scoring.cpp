#include "msn/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <random>

#include "msn/container.hpp"
#include "msn/error.hpp"
#include "msn/parallel.hpp"

namespace msn::scoring {
namespace {

std::vector<double> normalized_rows(std::span<const double> points, std::size_t m, std::size_t dim) {
  std::vector<double> x(points.begin(), points.begin() + long(m * dim));
  for (std::size_t i = 0; i < m; ++i) {
    double n = 0.0;
    for (std::size_t d = 0; d < dim; ++d) n += x[i * dim + d] * x[i * dim + d];
    n = std::sqrt(n);
    require(n > 0.0 && std::isfinite(n), Errc::invalid_argument, "kmeans: zero or non-finite embedding");
    for (std::size_t d = 0; d < dim; ++d) x[i * dim + d] /= n;
  }
  return x;
}

double sq_dist(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t d = 0; d < dim; ++d) s += (a[d] - b[d]) * (a[d] - b[d]);
  return s;
}

// Nearest centroid per point (lowest index on ties); returns the total squared distance.
double assign(const std::vector<double>& x, std::size_t m, std::size_t dim, const std::vector<double>& c,
              std::size_t k, std::vector<std::size_t>& owner, std::vector<double>& dist) {
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) {
      const double d = sq_dist(&x[i * dim], &c[j * dim], dim);
      if (d < best) {
        best = d;
        owner[i] = j;
      }
    }
    dist[i] = best;
    total += best;
  }
  return total;
}

std::vector<double> means(const std::vector<double>& x, std::size_t m, std::size_t dim, std::size_t k,
                          const std::vector<std::size_t>& owner, std::vector<std::size_t>& sizes) {
  std::vector<double> c(k * dim, 0.0);
  sizes.assign(k, 0);
  for (std::size_t i = 0; i < m; ++i) {
    ++sizes[owner[i]];
    for (std::size_t d = 0; d < dim; ++d) c[owner[i] * dim + d] += x[i * dim + d];
  }
  for (std::size_t j = 0; j < k; ++j)
    if (sizes[j] > 0)
      for (std::size_t d = 0; d < dim; ++d) c[j * dim + d] /= double(sizes[j]);
  return c;
}

std::vector<double> seed_plus_plus(const std::vector<double>& x, std::size_t m, std::size_t dim, std::size_t k,
                                   std::mt19937_64& rng) {
  std::vector<double> c;
  std::vector<bool> chosen(m, false);
  std::vector<double> d2(m, std::numeric_limits<double>::infinity());
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, m - 1)(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t j = 0; j < k; ++j) {
    chosen[pick] = true;
    c.insert(c.end(), x.begin() + long(pick * dim), x.begin() + long((pick + 1) * dim));
    if (j + 1 == k) break;
    double total = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      d2[i] = std::min(d2[i], sq_dist(&x[i * dim], &x[pick * dim], dim));
      total += d2[i];
    }
    if (total > 0.0) {
      double r = unit(rng) * total;
      pick = m;
      for (std::size_t i = 0; i < m; ++i) {
        if (d2[i] <= 0.0) continue;
        pick = i;
        if ((r -= d2[i]) < 0.0) break;
      }
    } else {
      std::vector<std::size_t> free;
      for (std::size_t i = 0; i < m; ++i)
        if (!chosen[i]) free.push_back(i);
      pick = free[std::uniform_int_distribution<std::size_t>(0, free.size() - 1)(rng)];
    }
  }
  return c;
}

struct Run {
  std::vector<double> centroids;
  std::vector<std::size_t> owner;
  double inertia = 0.0;
  std::vector<double> trace;
};

Run lloyd(const std::vector<double>& x, std::size_t m, std::size_t dim, std::size_t k, std::mt19937_64& rng,
          const KMeansOptions& opt) {
  Run run;
  std::vector<double> c = seed_plus_plus(x, m, dim, k, rng);
  std::vector<std::size_t> owner(m, 0), prev_owner, sizes;
  std::vector<double> dist(m);
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < std::max<std::size_t>(1, opt.max_iter); ++it) {
    const double j = assign(x, m, dim, c, k, owner, dist);
    require(j <= prev * (1.0 + 1e-12) + 1e-15, Errc::runtime,
            "kmeans: inertia increased from " + std::to_string(prev) + " to " + std::to_string(j));
    run.trace.push_back(j);
    const bool stable = owner == prev_owner;
    const bool small = std::isfinite(prev) && prev - j <= opt.tol * prev;
    prev = j;
    prev_owner = owner;
    if (stable || small || j == 0.0) break;
    c = means(x, m, dim, k, owner, sizes);
    for (std::size_t e = 0; e < k; ++e) {
      if (sizes[e] > 0) continue;
      // an emptied centroid takes over the worst-served point
      const std::size_t far = std::size_t(std::max_element(dist.begin(), dist.end()) - dist.begin());
      std::copy(&x[far * dim], &x[far * dim] + dim, &c[e * dim]);
      dist[far] = 0.0;
    }
  }
  // report the cost of the final partition around its own means
  std::vector<double> fin = means(x, m, dim, k, owner, sizes);
  for (std::size_t e = 0; e < k; ++e)
    if (sizes[e] == 0) std::copy(&c[e * dim], &c[e * dim] + dim, &fin[e * dim]);
  c = std::move(fin);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) total += sq_dist(&x[i * dim], &c[owner[i] * dim], dim);
  require(total <= prev * (1.0 + 1e-12) + 1e-15, Errc::runtime, "kmeans: final update raised the inertia");
  run.trace.push_back(total);
  run.inertia = total;
  run.centroids = std::move(c);
  run.owner = std::move(owner);
  return run;
}

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(salt), std::uint32_t(salt >> 32)};
  std::uint32_t w[2];
  seq.generate(w, w + 2);
  return (std::uint64_t(w[0]) << 32) | w[1];
}

std::string index_str(std::size_t i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

}  // namespace

KMeansResult kmeans(std::span<const double> points, std::size_t m, std::size_t dim, std::size_t k,
                    std::uint64_t seed, const KMeansOptions& opt) {
  require(m >= 1 && dim >= 1, Errc::invalid_argument, "kmeans: empty input");
  require(k >= 1, Errc::invalid_argument, "kmeans: cluster count must be >= 1");
  require(points.size() == m * dim, Errc::shape_mismatch, "kmeans: points must be m x dim");
  k = std::min(k, m);
  const std::vector<double> x = normalized_rows(points, m, dim);

  KMeansResult best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < std::max<std::size_t>(1, opt.restarts); ++r) {
    std::mt19937_64 rng(mix(seed, r));
    Run run = lloyd(x, m, dim, k, rng, opt);
    best.traces.push_back(run.trace);
    if (run.inertia < best.inertia) {
      best.inertia = run.inertia;
      best.centroids = std::move(run.centroids);
      best.assignment = std::move(run.owner);
    }
  }
  best.k = k;
  best.dim = dim;
  for (std::size_t j = 0; j < k; ++j) {
    double n = 0.0;
    for (std::size_t d = 0; d < dim; ++d) n += best.centroids[j * dim + d] * best.centroids[j * dim + d];
    n = std::sqrt(n);
    require(n > 0.0, Errc::runtime, "kmeans: centroid at the origin cannot be normalized");
    for (std::size_t d = 0; d < dim; ++d) best.centroids[j * dim + d] /= n;
  }
  return best;
}

double inertia(std::span<const double> points, std::size_t m, std::size_t dim, std::span<const double> centroids) {
  const std::vector<double> x = normalized_rows(points, m, dim);
  const std::size_t k = centroids.size() / dim;
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) best = std::min(best, sq_dist(&x[i * dim], &centroids[j * dim], dim));
    total += best;
  }
  return total;
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), Errc::shape_mismatch, "cosine_distance: length mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return 1.0 - dot;
}

double anomaly_score(std::span<const double> embedding, const std::vector<const PrototypeSet*>& sets) {
  double best = std::numeric_limits<double>::infinity();
  for (const PrototypeSet* s : sets) {
    require(s->dim == embedding.size(), Errc::shape_mismatch, "anomaly_score: embedding dimension mismatch");
    for (std::size_t j = 0; j < s->count(); ++j)
      best = std::min(best, cosine_distance(embedding, std::span(s->centroids).subspan(j * s->dim, s->dim)));
  }
  require(std::isfinite(best), Errc::invalid_argument, "anomaly_score: no prototypes supplied");
  return std::clamp(best, 0.0, 2.0);
}

std::vector<const PrototypeSet*> PrototypeStore::sets_for(const std::string& group) const {
  std::vector<const PrototypeSet*> out;
  for (const auto& s : sets)
    if (s.group == group) out.push_back(&s);
  return out;
}

void PrototypeStore::save(const std::filesystem::path& path) const {
  Container c;
  c.kind = "prototypes";
  c.meta["grouping"] = data::to_string(grouping);
  c.meta["dim"] = std::to_string(dim);
  c.meta["sets"] = std::to_string(sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    c.meta["set." + index_str(i) + ".group"] = sets[i].group;
    c.meta["set." + index_str(i) + ".domain"] = sets[i].domain;
    c.add("set/" + index_str(i), {sets[i].count(), sets[i].dim}, sets[i].centroids);
  }
  save_container(path, c);
}

PrototypeStore PrototypeStore::load(const std::filesystem::path& path) {
  const Container c = load_container(path, "prototypes");
  PrototypeStore s;
  s.grouping = data::parse_grouping(c.meta_at("grouping"));
  s.dim = std::stoul(c.meta_at("dim"));
  const std::size_t n = std::stoul(c.meta_at("sets"));
  for (std::size_t i = 0; i < n; ++i) {
    const NamedArray& a = c.at("set/" + index_str(i));
    require(a.shape.size() == 2 && a.shape[1] == s.dim, Errc::data, "prototype set " + index_str(i) + " has a bad shape");
    s.sets.push_back({c.meta_at("set." + index_str(i) + ".group"), c.meta_at("set." + index_str(i) + ".domain"), s.dim,
                      a.data});
  }
  return s;
}

PrototypeStore build_prototype_store(const std::vector<EmbeddedRow>& train, data::Grouping grouping, std::size_t p,
                                     std::uint64_t seed, const KMeansOptions& opt, std::ostream& warnings) {
  require(!train.empty(), Errc::data, "no training embeddings to build prototypes from");
  require(p >= 1, Errc::config, "prototype count must be >= 1");
  PrototypeStore store;
  store.grouping = grouping;
  store.dim = train.front().embedding.size();

  std::map<std::pair<std::string, std::string>, std::vector<const EmbeddedRow*>> groups;
  for (const auto& r : train) {
    require(r.embedding.size() == store.dim, Errc::shape_mismatch, "embedding dimensions differ");
    const std::string domain = grouping == data::Grouping::per_type ? r.row.domain : "";
    groups[{data::group_key(r.row, grouping), domain}].push_back(&r);
  }
  for (const auto& [key, rows] : groups)
    if (key.second == "source" && !groups.count({key.first, "target"}))
      warnings << "warning: group " << key.first << " has no target-domain rows; scoring against source only\n";

  std::vector<std::pair<std::pair<std::string, std::string>, std::vector<const EmbeddedRow*>>> items(groups.begin(),
                                                                                                       groups.end());
  store.sets.resize(items.size());
  parallel_for(items.size(), [&](std::size_t i) {
    const auto& rows = items[i].second;
    std::vector<double> pts;
    pts.reserve(rows.size() * store.dim);
    for (const auto* r : rows) pts.insert(pts.end(), r->embedding.begin(), r->embedding.end());
    KMeansResult km = kmeans(pts, rows.size(), store.dim, p, mix(seed, i), opt);
    store.sets[i] = {items[i].first.first, items[i].first.second, store.dim, std::move(km.centroids)};
  });
  return store;
}

ScoreTable score_rows(const std::vector<EmbeddedRow>& test, const PrototypeStore& store) {
  ScoreTable t;
  for (const auto& r : test) {
    const std::string group = data::group_key(r.row, store.grouping);
    const auto sets = store.sets_for(group);
    if (sets.empty()) {
      t.errors.push_back(r.row.path + ": no prototypes for group " + group);
      continue;
    }
    t.rows.push_back({r.row.path, anomaly_score(r.embedding, sets)});
  }
  return t;
}

void write_score_csv(const ScoreTable& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  require(bool(out), Errc::io, "cannot write scores " + path.string());
  out << "filename,score\n";
  char buf[32];
  for (const auto& r : table.rows) {
    require(r.filename.find_first_of(",\n") == std::string::npos, Errc::data, "file name contains a separator");
    std::snprintf(buf, sizeof buf, "%.6f", r.score);
    out << r.filename << ',' << buf << '\n';
  }
  require(bool(out), Errc::io, "failed writing scores " + path.string());
}

}  // namespace msn::scoring
