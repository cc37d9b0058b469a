#include "msn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <ostream>

#include "msn/config.hpp"
#include "msn/container.hpp"
#include "msn/error.hpp"
#include "msn/parallel.hpp"

namespace msn::train {
namespace {

constexpr double kUnitTolerance = 1e-6;

void check_unit_rows(std::span<const double> v, std::size_t rows, std::size_t dim, const char* what) {
  for (std::size_t r = 0; r < rows; ++r) {
    double n = 0.0;
    for (std::size_t j = 0; j < dim; ++j) n += v[r * dim + j] * v[r * dim + j];
    require(std::abs(std::sqrt(n) - 1.0) <= kUnitTolerance, Errc::invalid_argument,
            std::string("adacos_loss: ") + what + " row " + std::to_string(r) + " is not unit length");
  }
}

double log_sum_exp(const double* z, std::size_t n) {
  const double m = *std::max_element(z, z + n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(z[i] - m);
  return m + std::log(s);
}

std::size_t dominant_class(std::span<const double> t) {
  return std::size_t(std::max_element(t.begin(), t.end()) - t.begin());
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

// -------------------------------------------------------------- label space

LabelSpace::LabelSpace(std::vector<ClassKey> classes) : classes_(std::move(classes)) {
  std::sort(classes_.begin(), classes_.end());
  classes_.erase(std::unique(classes_.begin(), classes_.end()), classes_.end());
}

std::size_t LabelSpace::index_of(const std::string& type, const std::string& id) const {
  const ClassKey key{type, id};
  auto it = std::lower_bound(classes_.begin(), classes_.end(), key);
  require(it != classes_.end() && *it == key, Errc::data, "class " + key.str() + " is not in the label space");
  return std::size_t(it - classes_.begin());
}

bool LabelSpace::contains(const std::string& type, const std::string& id) const {
  return std::binary_search(classes_.begin(), classes_.end(), ClassKey{type, id});
}

LabelSpace build_label_space(const data::Manifest& manifest) {
  std::vector<ClassKey> keys;
  for (const auto& r : manifest.rows)
    if (r.split == data::Split::train && r.label == data::Label::normal) keys.push_back({r.type, r.id});
  return LabelSpace(std::move(keys));
}

// ------------------------------------------------------------- augmentation

double sample_beta(double a, double b, std::mt19937_64& rng) {
  std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
  const double x = ga(rng), y = gb(rng);
  return x + y > 0.0 ? x / (x + y) : 0.5;
}

std::vector<double> mixup(std::span<const double> a, std::span<const double> b, double lambda) {
  require(a.size() == b.size(), Errc::shape_mismatch, "mixup: inputs differ in length");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = lambda * a[i] + (1.0 - lambda) * b[i];
  return out;
}

std::vector<double> label_smooth(std::size_t cls, std::size_t classes, double eps) {
  require(cls < classes && classes >= 2, Errc::invalid_argument, "label_smooth: bad class index");
  std::vector<double> out(classes, eps / double(classes - 1));
  out[cls] = 1.0 - eps;
  return out;
}

// --------------------------------------------------------------------- head

SubClusterHead::SubClusterHead(std::size_t c, std::size_t s, std::size_t dim, std::mt19937_64& rng)
    : classes(c), sub(s), scale(initial_scale(c, s)) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(c * s * dim);
  for (double& x : v) x = gauss(rng);
  centers = ad::Tensor::from({c * s, dim}, std::move(v), true);
  renormalize();
}

double SubClusterHead::initial_scale(std::size_t classes, std::size_t sub) {
  const double n = double(classes * sub);
  return n > 2.0 ? std::max(1.0, std::numbers::sqrt2 * std::log(n - 1.0)) : 1.0;
}

void SubClusterHead::renormalize() {
  auto& v = centers.values();
  const std::size_t dim = centers.dim(1);
  for (std::size_t r = 0; r < centers.dim(0); ++r) {
    double n = 0.0;
    for (std::size_t j = 0; j < dim; ++j) n += v[r * dim + j] * v[r * dim + j];
    n = std::sqrt(n);
    require(n > 0.0, Errc::non_finite, "sub-center collapsed to zero");
    for (std::size_t j = 0; j < dim; ++j) v[r * dim + j] /= n;
  }
}

ad::Tensor adacos_loss(const ad::Tensor& embeddings, const ad::Tensor& centers, std::span<const double> targets,
                       std::size_t classes, std::size_t sub, double scale) {
  require(embeddings.rank() == 2 && centers.rank() == 2 && embeddings.dim(1) == centers.dim(1), Errc::shape_mismatch,
          "adacos_loss: embeddings " + ad::shape_str(embeddings.shape()) + " vs centers " +
              ad::shape_str(centers.shape()));
  const std::size_t B = embeddings.dim(0), D = embeddings.dim(1), K = classes * sub;
  require(centers.dim(0) == K, Errc::shape_mismatch, "adacos_loss: center count is not classes * sub");
  require(targets.size() == B * classes, Errc::shape_mismatch, "adacos_loss: targets must be B x classes");
  if (ad::checked_mode()) {
    check_unit_rows(embeddings.data(), B, D, "embedding");
    check_unit_rows(centers.data(), K, D, "center");
  }
  const auto& X = embeddings.data();
  const auto& W = centers.data();

  // z = s * X W^T; per row, full log-partition and per-class log-partitions
  std::vector<double> z(B * K), lse_class(B * classes), lse_all(B);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < K; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < D; ++d) dot += X[b * D + d] * W[j * D + d];
      z[b * K + j] = scale * dot;
    }
    lse_all[b] = log_sum_exp(&z[b * K], K);
    for (std::size_t c = 0; c < classes; ++c) lse_class[b * classes + c] = log_sum_exp(&z[b * K + c * sub], sub);
  }
  double loss = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < classes; ++c) {
      const double y = targets[b * classes + c];
      if (y != 0.0) loss -= y * (lse_class[b * classes + c] - lse_all[b]);
    }
  loss /= double(B);

  std::vector<double> t(targets.begin(), targets.end());
  std::shared_ptr<ad::Node> xn = embeddings.node(), wn = centers.node();
  return ad::make_result(
      {}, {loss}, {embeddings, centers},
      [xn, wn, z = std::move(z), lse_class = std::move(lse_class), lse_all = std::move(lse_all), t = std::move(t), B,
       D, K, classes, sub, scale](ad::Node& self) {
        // dL/dz_j = (p_j * sum_c y_c - y_c(j) * q_j) / B with q the within-class softmax
        const double g = self.grad[0] / double(B);
        std::vector<double> dcos(B * K);
        for (std::size_t b = 0; b < B; ++b) {
          double ysum = 0.0;
          for (std::size_t c = 0; c < classes; ++c) ysum += t[b * classes + c];
          for (std::size_t j = 0; j < K; ++j) {
            const std::size_t c = j / sub;
            const double zj = z[b * K + j];
            const double p = std::exp(zj - lse_all[b]);
            const double q = std::exp(zj - lse_class[b * classes + c]);
            dcos[b * K + j] = g * scale * (p * ysum - t[b * classes + c] * q);
          }
        }
        if (xn->requires_grad) {
          auto& gx = xn->ensure_grad();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < K; ++j) {
              const double d = dcos[b * K + j];
              if (d == 0.0) continue;
              for (std::size_t k = 0; k < D; ++k) gx[b * D + k] += d * wn->value[j * D + k];
            }
        }
        if (wn->requires_grad) {
          auto& gw = wn->ensure_grad();
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t j = 0; j < K; ++j) {
              const double d = dcos[b * K + j];
              if (d == 0.0) continue;
              for (std::size_t k = 0; k < D; ++k) gw[j * D + k] += d * xn->value[b * D + k];
            }
        }
      },
      "adacos_loss");
}

double adacos_scale(std::span<const double> embeddings, std::span<const double> centers,
                    std::span<const double> targets, std::size_t classes, std::size_t sub, double scale,
                    double max_scale) {
  const std::size_t K = classes * sub;
  require(classes > 0 && targets.size() % classes == 0, Errc::shape_mismatch, "adacos_scale: bad targets");
  const std::size_t B = targets.size() / classes;
  require(B > 0 && embeddings.size() % B == 0 && centers.size() == K * (embeddings.size() / B), Errc::shape_mismatch,
          "adacos_scale: inconsistent sizes");
  const std::size_t D = embeddings.size() / B;
  double b_sum = 0.0;
  std::vector<double> angles(B);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t target = dominant_class(targets.subspan(b * classes, classes));
    double best = -1.0;
    for (std::size_t j = 0; j < K; ++j) {
      double cos = 0.0;
      for (std::size_t d = 0; d < D; ++d) cos += embeddings[b * D + d] * centers[j * D + d];
      cos = std::clamp(cos, -1.0, 1.0);
      if (j / sub == target)
        best = std::max(best, cos);
      else
        b_sum += std::exp(scale * cos);
    }
    angles[b] = std::acos(best);
  }
  std::sort(angles.begin(), angles.end());
  const double med = B % 2 ? angles[B / 2] : 0.5 * (angles[B / 2 - 1] + angles[B / 2]);
  const double b_avg = b_sum / double(B);
  if (!(b_avg > 0.0)) return std::clamp(scale, 1.0, max_scale);
  const double s = std::log(b_avg) / std::cos(std::min(std::numbers::pi / 4.0, med));
  return std::clamp(std::isfinite(s) ? s : scale, 1.0, std::max(1.0, max_scale));
}

// ---------------------------------------------------------------- training

void TrainConfig::validate() const {
  require(lr >= 0.0 && std::isfinite(lr), Errc::config, "lr must be non-negative");
  require(batch >= 1 && epochs >= 1, Errc::config, "batch and epochs must be >= 1");
  require(mixup_alpha > 0.0, Errc::config, "mixup_alpha must be positive");
  require(mixup_prob >= 0.0 && mixup_prob <= 1.0, Errc::config, "mixup_prob must lie in [0, 1]");
  require(smoothing_max >= 0.0 && smoothing_max < 1.0, Errc::config, "smoothing_max must lie in [0, 1)");
  require(sub_clusters >= 1, Errc::config, "sub_clusters must be >= 1");
}

namespace {

std::vector<ad::Parameter> trainable(net::MsnModel& model, SubClusterHead& head) {
  auto params = model.parameters();
  params.push_back({"head.centers", head.centers});
  return params;
}

std::mt19937_64 head_rng(std::uint64_t seed) { return std::mt19937_64(seed ^ 0x5bd1e995u); }

}  // namespace

Trainer::Trainer(const net::ModelConfig& model_cfg, const TrainConfig& train_cfg, LabelSpace labels)
    : model_cfg_(model_cfg),
      cfg_(train_cfg),
      labels_(std::move(labels)),
      model_(model_cfg),
      head_([&] {
        cfg_.validate();
        require(labels_.size() >= 2, Errc::data,
                "training needs at least 2 classes, found " + std::to_string(labels_.size()));
        auto rng = head_rng(model_cfg.seed);
        return SubClusterHead(labels_.size(), cfg_.sub_clusters, model_.embedding_dim(), rng);
      }()),
      adam_(trainable(model_, head_), ad::AdamOptions{cfg_.lr}),
      rng_(train_cfg.seed) {}

double Trainer::step(std::vector<dsp::AudioClip> clips, const std::vector<std::size_t>& classes) {
  const std::size_t B = clips.size(), C = labels_.size();
  require(B > 0 && classes.size() == B, Errc::invalid_argument, "step: clips and classes differ in count");
  for (auto& c : clips) c = dsp::fix_length(c, model_cfg_.frontend.clip_seconds);

  std::vector<double> targets(B * C, 0.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng_) < cfg_.mixup_prob) {
    const double lambda = sample_beta(cfg_.mixup_alpha, cfg_.mixup_alpha, rng_);
    std::vector<std::size_t> partner(B);
    for (std::size_t i = 0; i < B; ++i) partner[i] = i;
    std::shuffle(partner.begin(), partner.end(), rng_);
    std::vector<dsp::AudioClip> mixed(B);
    for (std::size_t i = 0; i < B; ++i) {
      mixed[i] = {mixup(clips[i].samples, clips[partner[i]].samples, lambda), clips[i].sample_rate};
      targets[i * C + classes[i]] += lambda;
      targets[i * C + classes[partner[i]]] += 1.0 - lambda;
    }
    clips = std::move(mixed);
  } else {
    for (std::size_t i = 0; i < B; ++i) {
      const auto t = label_smooth(classes[i], C, cfg_.smoothing_max * unit(rng_));
      std::copy(t.begin(), t.end(), targets.begin() + long(i * C));
    }
  }

  std::vector<net::Features> feats(B);
  parallel_for(B, [&](std::size_t i) { feats[i] = net::extract_features(clips[i], model_cfg_.frontend); });

  adam_.zero_grad();
  ad::Tensor emb = model_.forward(feats, true);
  head_.scale = adacos_scale(emb.data(), head_.centers.data(), targets, C, head_.sub, head_.scale, head_.max_scale());
  ad::Tensor loss = adacos_loss(emb, head_.centers, targets, C, head_.sub, head_.scale);
  loss.backward();
  adam_.step();
  head_.renormalize();
  return loss.item();
}

EpochLog Trainer::run_epoch(const data::Manifest& train_rows) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < train_rows.size(); ++i) {
    const auto& r = train_rows.rows[i];
    if (r.split == data::Split::train && r.label == data::Label::normal) order.push_back(i);
  }
  require(!order.empty(), Errc::data, "no normal training rows");
  std::shuffle(order.begin(), order.end(), rng_);

  double total = 0.0;
  std::size_t seen = 0;
  for (std::size_t first = 0; first < order.size(); first += cfg_.batch) {
    const std::size_t n = std::min(cfg_.batch, order.size() - first);
    std::vector<dsp::AudioClip> clips(n);
    std::vector<std::size_t> classes(n);
    parallel_for(n, [&](std::size_t i) {
      const auto& r = train_rows.rows[order[first + i]];
      clips[i] = dsp::load_wav(train_rows.resolve(r));
    });
    for (std::size_t i = 0; i < n; ++i) {
      const auto& r = train_rows.rows[order[first + i]];
      classes[i] = labels_.index_of(r.type, r.id);
    }
    total += step(std::move(clips), classes) * double(n);
    seen += n;
  }
  ++epochs_done_;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {epochs_done_, total / double(seen), head_.scale, secs};
}

void Trainer::save(const std::filesystem::path& path) {
  Container c;
  c.kind = "checkpoint";
  for (const auto& [k, v] : model_entries(model_cfg_)) c.meta["model." + k] = v;
  for (const auto& [k, v] : train_entries(cfg_)) c.meta["train." + k] = v;
  c.meta["labels"] = std::to_string(labels_.size());
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    char idx[24];
    std::snprintf(idx, sizeof idx, "%06zu", i);
    c.meta["label." + std::string(idx) + ".type"] = labels_.classes()[i].type;
    c.meta["label." + std::string(idx) + ".id"] = labels_.classes()[i].id;
  }
  c.meta["adam_step"] = std::to_string(adam_.steps());
  c.meta["epochs_done"] = std::to_string(epochs_done_);
  c.meta["adacos_scale"] = fmt(head_.scale);
  c.add("head/scale", {1}, {head_.scale});
  const auto& params = adam_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    c.add("param/" + p.name, p.value.shape(), p.value.values());
    c.add("adam_m/" + p.name, p.value.shape(), adam_.first_moments()[i]);
    c.add("adam_v/" + p.name, p.value.shape(), adam_.second_moments()[i]);
  }
  for (const auto& b : model_.buffers()) c.add("buffer/" + b.name, {b.values->size()}, *b.values);
  save_container(path, c);
}

Trainer Trainer::load(const std::filesystem::path& path) {
  const Container c = load_container(path, "checkpoint");
  net::ModelConfig mc;
  TrainConfig tc;
  for (const auto& [k, v] : c.meta) {
    if (k.rfind("model.", 0) == 0)
      require(set_model_entry(mc, k.substr(6), v), Errc::version_mismatch, "unknown checkpoint key " + k);
    else if (k.rfind("train.", 0) == 0)
      require(set_train_entry(tc, k.substr(6), v), Errc::version_mismatch, "unknown checkpoint key " + k);
  }
  std::vector<ClassKey> keys;
  const std::size_t n = std::stoul(c.meta_at("labels"));
  for (std::size_t i = 0; i < n; ++i) {
    char idx[24];
    std::snprintf(idx, sizeof idx, "%06zu", i);
    keys.push_back({c.meta_at("label." + std::string(idx) + ".type"), c.meta_at("label." + std::string(idx) + ".id")});
  }
  Trainer t(mc, tc, LabelSpace(std::move(keys)));
  auto copy_into = [&](const std::string& name, std::vector<double>& dst) {
    const NamedArray& a = c.at(name);
    require(a.data.size() == dst.size(), Errc::version_mismatch,
            "checkpoint array " + name + " has " + std::to_string(a.data.size()) + " values, model expects " +
                std::to_string(dst.size()));
    dst = a.data;
  };
  const auto& params = t.adam_.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ad::Tensor v = params[i].value;
    copy_into("param/" + params[i].name, v.values());
    copy_into("adam_m/" + params[i].name, t.adam_.first_moments()[i]);
    copy_into("adam_v/" + params[i].name, t.adam_.second_moments()[i]);
  }
  for (const auto& b : t.model_.buffers()) copy_into("buffer/" + b.name, *b.values);
  t.head_.scale = c.at("head/scale").data.at(0);
  t.adam_.set_steps(std::stoul(c.meta_at("adam_step")));
  t.epochs_done_ = std::stoul(c.meta_at("epochs_done"));
  return t;
}

Trainer train(const data::Manifest& manifest, const net::ModelConfig& model_cfg, const TrainConfig& train_cfg,
              const std::filesystem::path& log_csv, std::ostream& log) {
  const data::Manifest rows = manifest.select(data::Split::train);
  require(!rows.empty(), Errc::data, "manifest has no training rows");
  Trainer t(model_cfg, train_cfg, build_label_space(rows));
  std::ofstream csv;
  if (!log_csv.empty()) {
    csv.open(log_csv, std::ios::binary);
    require(bool(csv), Errc::io, "cannot write log " + log_csv.string());
    csv << "epoch,mean_loss,adacos_scale,seconds\n";
  }
  for (std::size_t e = 0; e < train_cfg.epochs; ++e) {
    const EpochLog rec = t.run_epoch(rows);
    char line[160];
    std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.3f", rec.epoch, rec.mean_loss, rec.scale, rec.seconds);
    char pretty[200];
    std::snprintf(pretty, sizeof pretty, "epoch=%zu mean_loss=%.6f adacos_scale=%.6f seconds=%.3f", rec.epoch,
                  rec.mean_loss, rec.scale, rec.seconds);
    log << pretty << '\n' << std::flush;
    if (csv.is_open()) csv << line << '\n' << std::flush;
  }
  return t;
}

}  // namespace msn::train
