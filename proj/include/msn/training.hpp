#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "msn/autodiff/optim.hpp"
#include "msn/manifest.hpp"
#include "msn/network.hpp"

namespace msn::train {

struct ClassKey {
  std::string type;
  std::string id;

  auto operator<=>(const ClassKey&) const = default;
  std::string str() const { return type + "/" + id; }
};

/// Sorted, duplicate-free list of (machine type, id or attribute) classes.
class LabelSpace {
 public:
  LabelSpace() = default;
  explicit LabelSpace(std::vector<ClassKey> classes);

  std::size_t size() const { return classes_.size(); }
  const std::vector<ClassKey>& classes() const { return classes_; }
  /// Throws Errc::data for a class outside the space.
  std::size_t index_of(const std::string& type, const std::string& id) const;
  bool contains(const std::string& type, const std::string& id) const;

 private:
  std::vector<ClassKey> classes_;
};

/// Classes of the normal training rows.
LabelSpace build_label_space(const data::Manifest& manifest);

/// Beta(a, b) from two gamma draws.
double sample_beta(double a, double b, std::mt19937_64& rng);

/// lambda * a + (1 - lambda) * b, elementwise.
std::vector<double> mixup(std::span<const double> a, std::span<const double> b, double lambda);

/// True class 1 - eps, every other class eps / (C - 1).
std::vector<double> label_smooth(std::size_t cls, std::size_t classes, double eps);

/// Unit-norm class sub-centers plus the adaptive logit scale.
struct SubClusterHead {
  std::size_t classes = 0;
  std::size_t sub = 0;
  ad::Tensor centers;  // (classes * sub, dim); rows of class c are c*sub .. c*sub+sub-1
  double scale = 1.0;

  SubClusterHead() = default;
  SubClusterHead(std::size_t classes, std::size_t sub, std::size_t dim, std::mt19937_64& rng);

  /// sqrt(2) * ln(C*S - 1), at least 1.
  static double initial_scale(std::size_t classes, std::size_t sub);
  double max_scale() const { return 2.0 * initial_scale(classes, sub); }
  void renormalize();
};

/// Cross-entropy of the summed sub-center softmax mass per class against soft
/// targets (B x C, rows summing to 1), averaged over the batch. Logits are
/// scale * cos; the scale carries no gradient. In checked mode, rows of
/// `embeddings` and `centers` must be unit length.
ad::Tensor adacos_loss(const ad::Tensor& embeddings, const ad::Tensor& centers, std::span<const double> targets,
                       std::size_t classes, std::size_t sub, double scale);

/// Dynamic scale: ln(B_avg) / cos(min(pi/4, theta_med)), clamped to [1, max_scale].
/// B_avg is the batch mean of summed non-target exp(scale * cos) under the current
/// scale; theta_med is the median angle to the nearest sub-center of each row's
/// dominant target class.
double adacos_scale(std::span<const double> embeddings, std::span<const double> centers,
                    std::span<const double> targets, std::size_t classes, std::size_t sub, double scale,
                    double max_scale);

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch = 64;
  std::size_t epochs = 100;
  double mixup_alpha = 0.2;
  double mixup_prob = 0.5;
  double smoothing_max = 0.5;
  std::size_t sub_clusters = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double scale = 0.0;
  double seconds = 0.0;
};

/// Model, head and optimizer state for one training run.
class Trainer {
 public:
  Trainer(const net::ModelConfig& model_cfg, const TrainConfig& train_cfg, LabelSpace labels);

  /// One optimizer step. Draws mixup or label smoothing from the trainer's RNG.
  double step(std::vector<dsp::AudioClip> clips, const std::vector<std::size_t>& classes);
  /// One pass over the normal training rows in a seeded random order.
  EpochLog run_epoch(const data::Manifest& train_rows);

  net::MsnModel& model() { return model_; }
  const net::MsnModel& model() const { return model_; }
  SubClusterHead& head() { return head_; }
  const LabelSpace& labels() const { return labels_; }
  const TrainConfig& config() const { return cfg_; }
  std::size_t epochs_done() const { return epochs_done_; }

  /// Everything needed to resume or to embed: configs, labels, parameters,
  /// normalization statistics, optimizer moments and the scale.
  void save(const std::filesystem::path& path);
  static Trainer load(const std::filesystem::path& path);

 private:
  net::ModelConfig model_cfg_;
  TrainConfig cfg_;
  LabelSpace labels_;
  net::MsnModel model_;
  SubClusterHead head_;
  ad::Adam adam_;
  std::mt19937_64 rng_;
  std::size_t epochs_done_ = 0;
};

/// Full training run: logs each epoch to `log` and to the CSV at log_csv (when
/// non-empty) with columns epoch,mean_loss,adacos_scale,seconds.
Trainer train(const data::Manifest& manifest, const net::ModelConfig& model_cfg, const TrainConfig& train_cfg,
              const std::filesystem::path& log_csv, std::ostream& log);

}  // namespace msn::train
