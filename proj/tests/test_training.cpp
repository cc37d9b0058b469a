#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "gradcheck.hpp"
#include "msn/error.hpp"
#include "msn/synth.hpp"
#include "msn/training.hpp"
#include "tempdir.hpp"

using namespace msn;
using namespace msn::train;
using msn::testing::TempDir;

namespace {

data::Manifest rows_of(const std::vector<std::pair<std::string, std::string>>& keys) {
  data::Manifest m;
  for (std::size_t i = 0; i < keys.size(); ++i)
    m.rows.push_back({"f" + std::to_string(i) + ".wav", keys[i].first, keys[i].second, "", data::Split::train,
                      data::Label::normal});
  return m;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Independent evaluation of the loss: explicit softmax, summed class mass, cross-entropy.
double reference_loss(const std::vector<double>& x, const std::vector<double>& w, const std::vector<double>& t,
                      std::size_t B, std::size_t C, std::size_t S, std::size_t D, double s) {
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<double> e(C * S);
    double z = 0.0;
    for (std::size_t j = 0; j < C * S; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < D; ++d) dot += x[b * D + d] * w[j * D + d];
      e[j] = std::exp(s * dot);
      z += e[j];
    }
    for (std::size_t c = 0; c < C; ++c) {
      double mass = 0.0;
      for (std::size_t k = 0; k < S; ++k) mass += e[c * S + k] / z;
      total -= t[b * C + c] * std::log(mass);
    }
  }
  return total / double(B);
}

std::vector<double> random_unit_rows(std::size_t rows, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(rows * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    double n = 0.0;
    for (std::size_t d = 0; d < dim; ++d) n += (v[r * dim + d] = g(rng)) * v[r * dim + d];
    for (std::size_t d = 0; d < dim; ++d) v[r * dim + d] /= std::sqrt(n);
  }
  return v;
}

std::vector<double> random_targets(std::size_t B, std::size_t C, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> t(B * C);
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += (t[b * C + c] = u(rng) < 0.5 ? 0.0 : u(rng));
    if (s == 0.0) t[b * C] = s = 1.0;
    for (std::size_t c = 0; c < C; ++c) t[b * C + c] /= s;
  }
  return t;
}

net::ModelConfig tiny_model() {
  net::ModelConfig c = net::ModelConfig::micro();
  c.stem_channels = 2;
  c.stage_channels = {2, 3, 3, 4};
  c.kernels = {{16, 8}, {32, 16}};
  c.patch_channels = {2, 2, 3};
  c.patch_hidden = 8;
  c.patch_embed = 4;
  c.msn_embed = 4;
  c.spectrum_channels = 2;
  c.spectrum_width = 4;
  c.spectrum_layers = 2;
  return c;
}

data::Manifest small_synth(const std::filesystem::path& dir, std::size_t classes, std::size_t clips) {
  data::SynthConfig s;
  s.classes = classes;
  s.train_per_class = clips;
  s.test_normal_per_class = 0;
  s.test_anomaly_per_class = 0;
  s.seed = 2;
  return data::synth_dataset(s, dir);
}

}  // namespace

TEST_CASE("label space construction") {
  CHECK(build_label_space(rows_of({{"a", "1"}, {"a", "2"}, {"a", "3"}, {"b", "1"}, {"b", "2"}, {"b", "3"}})).size() ==
        6);
  LabelSpace dup = build_label_space(rows_of({{"fan", "id_00"}, {"fan", "id_00"}, {"fan", "id_02"}}));
  CHECK(dup.size() == 2);
  LabelSpace ls = build_label_space(rows_of({{"pump", "id_02"}, {"fan", "id_04"}, {"fan", "id_00"}}));
  REQUIRE(ls.size() == 3);
  CHECK(ls.classes()[0].str() == "fan/id_00");
  CHECK(ls.classes()[1].str() == "fan/id_04");
  CHECK(ls.index_of("pump", "id_02") == 2);
  CHECK_THROWS_AS(ls.index_of("pump", "id_09"), Error);
}

TEST_CASE("2020-style names give four classes per machine type") {
  data::Manifest m;
  for (const std::string type : {"fan", "pump"})
    for (int id : {0, 2, 4, 6})
      for (int k = 0; k < 3; ++k) {
        char name[64];
        std::snprintf(name, sizeof name, "normal_id_%02d_%08d.wav", id, k);
        auto p = data::parse_dcase_name(name, data::DcaseStyle::y2020);
        REQUIRE(p.recognized);
        m.rows.push_back({type + "/train/" + name, type, p.id, "", data::Split::train, p.label});
      }
  LabelSpace ls = build_label_space(m);
  CHECK(ls.size() == 8);
  std::size_t fans = 0;
  for (const auto& c : ls.classes()) fans += c.type == "fan";
  CHECK(fans == 4);
}

TEST_CASE("mixup examples") {
  std::vector<double> a{0.5, -1.0, 2.0}, b{-0.5, 1.0, -2.0};
  CHECK(mixup(a, b, 1.0) == a);
  for (double v : mixup(a, b, 0.5)) CHECK(v == 0.0);
  CHECK_THROWS_AS(mixup(a, std::vector<double>{1.0}, 0.5), Error);
}

TEST_CASE("Beta(0.2, 0.2) sample mean") {
  std::mt19937_64 rng(42);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double v = sample_beta(0.2, 0.2, rng);
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
    sum += v;
  }
  CHECK(std::abs(sum / n - 0.5) <= 0.01);
}

TEST_CASE("label smoothing") {
  CHECK(label_smooth(1, 3, 0.0) == std::vector<double>{0.0, 1.0, 0.0});
  auto t = label_smooth(0, 4, 0.3);
  CHECK(t[0] == doctest::Approx(0.7).epsilon(1e-15));
  for (int i = 1; i < 4; ++i) CHECK(t[i] == doctest::Approx(0.1).epsilon(1e-15));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 0.5);
  for (int i = 0; i < 500; ++i) {
    const std::size_t C = 2 + rng() % 20;
    auto s = label_smooth(rng() % C, C, u(rng));
    double sum = 0.0;
    for (double v : s) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}

TEST_CASE("initial AdaCos scale") {
  CHECK(SubClusterHead::initial_scale(10, 16) == doctest::Approx(std::numbers::sqrt2 * std::log(159.0)));
  CHECK(SubClusterHead::initial_scale(10, 16) == doctest::Approx(7.17).epsilon(1e-3));
  std::mt19937_64 rng(3);
  SubClusterHead h(10, 16, 8, rng);
  CHECK(h.centers.shape() == ad::Shape{160, 8});
  CHECK(h.scale == SubClusterHead::initial_scale(10, 16));
}

TEST_CASE("loss vanishes as the scale grows for a perfect match") {
  // B=1, C=2, S=1, embedding on its target center
  ad::Tensor x = ad::Tensor::from({1, 2}, {1.0, 0.0});
  ad::Tensor w = ad::Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  std::vector<double> t{1.0, 0.0};
  double prev = INFINITY;
  for (double s : {1.0, 2.0, 4.0, 8.0, 16.0, 32.0}) {
    const double l = adacos_loss(x, w, t, 2, 1, s).item();
    CHECK(l > 0.0);
    CHECK(l < prev);
    prev = l;
  }
  CHECK(prev < 1e-12);
}

TEST_CASE("uniform targets on symmetric centers cost ln C") {
  const double r = 1.0 / std::sqrt(2.0);
  ad::Tensor x = ad::Tensor::from({1, 2}, {r, r});
  ad::Tensor w = ad::Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  for (double s : {1.0, 5.0, 30.0}) CHECK(adacos_loss(x, w, std::vector<double>{0.5, 0.5}, 2, 1, s).item() ==
                                          doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // two sub-centers per class, mirrored
  ad::Tensor w4 = ad::Tensor::from({4, 2}, {1.0, 0.0, 0.6, 0.8, 0.0, 1.0, 0.8, 0.6});
  CHECK(adacos_loss(x, w4, std::vector<double>{0.5, 0.5}, 2, 2, 7.0).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("loss matches an explicit softmax evaluation") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 1 + rng() % 5, C = 2 + rng() % 4, S = 1 + rng() % 4, D = 2 + rng() % 6;
    auto x = random_unit_rows(B, D, rng), w = random_unit_rows(C * S, D, rng);
    auto t = random_targets(B, C, rng);
    const double s = 1.0 + double(rng() % 200) / 10.0;
    const double got = adacos_loss(ad::Tensor::from({B, D}, x), ad::Tensor::from({C * S, D}, w), t, C, S, s).item();
    CHECK(got == doctest::Approx(reference_loss(x, w, t, B, C, S, D, s)).epsilon(1e-10));
  }
}

TEST_CASE("AdaCos head gradients") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t B = 1 + rng() % 4, C = 2 + rng() % 3, S = 1 + rng() % 3, D = 2 + rng() % 5;
    ad::Tensor xr = testing::random_tensor({B, D}, rng);
    ad::Tensor wr = testing::random_tensor({C * S, D}, rng);
    auto t = random_targets(B, C, rng);
    const double s = 1.0 + double(rng() % 100) / 10.0;
    auto res = testing::grad_check(
        [&](const std::vector<ad::Tensor>& in) {
          return adacos_loss(ad::l2_normalize_rows(in[0]), ad::l2_normalize_rows(in[1]), t, C, S, s);
        },
        {xr, wr});
    CHECK(res.max_rel_error < 1e-3);
  }
}

TEST_CASE("checked mode rejects non-unit rows") {
  ad::Tensor x = ad::Tensor::from({1, 2}, {2.0, 0.0});
  ad::Tensor w = ad::Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  CHECK_THROWS_AS(adacos_loss(x, w, std::vector<double>{1.0, 0.0}, 2, 1, 2.0), Error);
  ad::set_checked_mode(false);
  CHECK_NOTHROW(adacos_loss(x, w, std::vector<double>{1.0, 0.0}, 2, 1, 2.0));
  ad::set_checked_mode(true);
}

TEST_CASE("mixed loss stays inside the envelope") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 2 + rng() % 5, S = 1 + rng() % 3, D = 4;
    ad::Tensor x = ad::Tensor::from({1, D}, random_unit_rows(1, D, rng));
    ad::Tensor w = ad::Tensor::from({C * S, D}, random_unit_rows(C * S, D, rng));
    const std::size_t a = rng() % C, b = rng() % C;
    const double lambda = u(rng), s = 1.0 + 10.0 * u(rng);
    std::vector<double> ta(C, 0.0), tb(C, 0.0), tm(C, 0.0);
    ta[a] = tb[b] = 1.0;
    tm[a] += lambda;
    tm[b] += 1.0 - lambda;
    const double la = adacos_loss(x, w, ta, C, S, s).item(), lb = adacos_loss(x, w, tb, C, S, s).item();
    const double lm = adacos_loss(x, w, tm, C, S, s).item();
    CHECK(lm <= std::max(la, lb) + std::log(double(C)) + 1e-12);
    CHECK(lm == doctest::Approx(lambda * la + (1.0 - lambda) * lb).epsilon(1e-10));
  }
}

TEST_CASE("dynamic scale follows the closed form and its clamp") {
  // B=1, C=2, S=1: target center at angle theta, the other center orthogonal to the embedding
  const double theta = 0.5;
  std::vector<double> x{1.0, 0.0};
  std::vector<double> w{std::cos(theta), std::sin(theta), 0.0, 1.0};
  std::vector<double> t{1.0, 0.0};
  const double s_old = 3.0;
  const double expected = std::log(std::exp(s_old * 0.0)) / std::cos(std::min(std::numbers::pi / 4, theta));
  CHECK(adacos_scale(x, w, t, 2, 1, s_old, 100.0) == doctest::Approx(std::max(1.0, expected)));
  // non-target center close to the embedding pushes the scale up, capped at max
  std::vector<double> w2{std::cos(theta), std::sin(theta), std::cos(0.1), std::sin(0.1)};
  const double raw = (s_old * std::cos(0.1)) / std::cos(theta);
  CHECK(adacos_scale(x, w2, t, 2, 1, s_old, 100.0) == doctest::Approx(raw).epsilon(1e-12));
  CHECK(adacos_scale(x, w2, t, 2, 1, s_old, 2.0) == 2.0);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.smoothing_max = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.batch = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("training errors") {
  data::Manifest empty;
  std::ostringstream log;
  CHECK_THROWS_AS(train::train(empty, tiny_model(), {}, {}, log), Error);
  CHECK_THROWS_AS(Trainer(tiny_model(), {}, LabelSpace(std::vector<ClassKey>{{"fan", "id_00"}})), Error);
}

TEST_CASE("training is deterministic and checkpoints round-trip") {
  TempDir dir("train_det");
  data::Manifest m = small_synth(dir / "data", 2, 3);
  TrainConfig tc;
  tc.batch = 4;
  tc.epochs = 2;
  tc.sub_clusters = 2;
  tc.seed = 11;
  net::ModelConfig mc = tiny_model();
  mc.seed = 11;
  std::ostringstream log1, log2;
  Trainer a = train::train(m, mc, tc, dir / "log.csv", log1);
  Trainer b = train::train(m, mc, tc, {}, log2);
  a.save(dir / "a.ckpt");
  b.save(dir / "b.ckpt");
  CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "b.ckpt"));
  CHECK(log1.str().find("epoch=2 ") != std::string::npos);

  std::ifstream csv(dir / "log.csv");
  std::string header, line;
  std::getline(csv, header);
  CHECK(header == "epoch,mean_loss,adacos_scale,seconds");
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 2);

  Trainer c = Trainer::load(dir / "a.ckpt");
  c.save(dir / "c.ckpt");
  CHECK(read_bytes(dir / "a.ckpt") == read_bytes(dir / "c.ckpt"));
  CHECK(c.epochs_done() == 2);
  CHECK(c.labels().size() == 2);

  auto clip = dsp::load_wav(m.resolve(m.rows[0]));
  std::vector<net::Features> f{net::extract_features(clip, mc.frontend)};
  CHECK(a.model().embed(f) == c.model().embed(f));
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
  TempDir dir("train_lr0");
  data::Manifest m = small_synth(dir.path(), 2, 3);
  TrainConfig tc;
  tc.lr = 0.0;
  tc.batch = 3;
  tc.sub_clusters = 2;
  Trainer t(tiny_model(), tc, build_label_space(m));
  std::vector<std::vector<double>> before;
  for (const auto& p : t.model().parameters()) before.push_back(p.value.values());
  const auto centers = t.head().centers.values();
  t.run_epoch(m);
  auto after = t.model().parameters();
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i].value.values() == before[i]);
  for (std::size_t i = 0; i < centers.size(); ++i)
    CHECK(std::abs(t.head().centers.values()[i] - centers[i]) <= 1e-12);
}

TEST_CASE("toy run: descent, unit centers, bounded scale, live gradients") {
  TempDir dir("train_toy");
  data::Manifest m = small_synth(dir.path(), 2, 4);
  TrainConfig tc;
  tc.batch = 8;
  tc.sub_clusters = 4;
  tc.seed = 3;
  net::ModelConfig mc = net::ModelConfig::micro();
  mc.seed = 3;
  Trainer t(mc, tc, build_label_space(m));
  const double s0 = SubClusterHead::initial_scale(2, 4);

  auto params = t.model().parameters();
  std::vector<bool> touched(params.size(), false);
  std::vector<double> losses;
  for (int e = 0; e < 30; ++e) {
    losses.push_back(t.run_epoch(m).mean_loss);
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i].value.has_grad())
        for (double g : params[i].value.grad())
          if (g != 0.0) touched[i] = true;
    CHECK(t.head().scale >= 1.0);
    CHECK(t.head().scale <= 2.0 * s0);
    const auto& c = t.head().centers.values();
    const std::size_t D = t.head().centers.dim(1);
    for (std::size_t r = 0; r < t.head().centers.dim(0); ++r) {
      double n = 0.0;
      for (std::size_t d = 0; d < D; ++d) n += c[r * D + d] * c[r * D + d];
      CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-9);
    }
  }
  const double first = (losses[0] + losses[1] + losses[2]) / 3.0;
  const double last = (losses[27] + losses[28] + losses[29]) / 3.0;
  CHECK(last < first);
  for (std::size_t i = 0; i < params.size(); ++i) {
    INFO(params[i].name);
    CHECK(touched[i]);
  }
}
