#include <algorithm>
#include <random>

#include "doctest.h"
#include "msn/error.hpp"
#include "msn/scanner.hpp"

using namespace msn;
using namespace msn::scanner;

namespace {

dsp::Spectrogram row_marker(std::size_t F, std::size_t T) {
  dsp::Spectrogram s{std::vector<double>(F * T), F, T};
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t t = 0; t < T; ++t) s.at(f, t) = double(f);
  return s;
}

}  // namespace

TEST_CASE("steps_from_counts follows the single and multi-scan formulas") {
  CHECK(steps_from_counts(513, 311, {32, 16}, 1, 1).f_step == 481);
  CHECK(steps_from_counts(513, 313, {32, 16}, 1, 5).t_step == 74);
  CHECK(steps_from_counts(40, 20, {32, 16}, 20, 2).f_step == 1);
  CHECK_THROWS_AS(steps_from_counts(16, 20, {32, 16}, 2, 2), Error);
  CHECK_THROWS_AS(steps_from_counts(64, 20, {32, 16}, 0, 2), Error);
}

TEST_CASE("plan_from_steps enumerates anchors and pins the far boundary") {
  CHECK(plan_from_steps(64, 48, {32, 16}, 8, 32).f_positions == std::vector<std::size_t>{0, 8, 16, 24, 32});
  CHECK(plan_from_steps(48, 48, {32, 16}, 8, 32).t_positions == std::vector<std::size_t>{0, 16, 32});
  CHECK(plan_from_steps(48, 48, {32, 32}, 8, 32).t_positions == std::vector<std::size_t>{0, 16});
  ScanPlan p = plan_from_steps(70, 48, {32, 16}, 16, 32);
  CHECK(p.f_positions == std::vector<std::size_t>{0, 16, 32, 38});
  CHECK(p.n_f() == 4);
  CHECK_THROWS_AS(plan_from_steps(70, 48, {32, 16}, 0, 32), Error);
  CHECK_THROWS_AS(plan_from_steps(70, 8, {32, 16}, 4, 4), Error);
}

TEST_CASE("scan extracts row-major sub-rectangles") {
  dsp::Spectrogram s = row_marker(64, 48);
  {
    dsp::Spectrogram whole = s;
    PatchStack one = scan(whole, {64, 48}, plan_from_steps(64, 48, {64, 48}, 1, 1));
    CHECK(one.count == 1);
    CHECK(one.values == whole.values);
  }
  KernelBox box{32, 16};
  ScanPlan plan = plan_from_steps(64, 48, box, 8, 32);
  PatchStack stack = scan(s, box, plan);
  CHECK(stack.count == 15);
  for (std::size_t i = 0; i < plan.n_f(); ++i)
    for (std::size_t j = 0; j < plan.n_t(); ++j) {
      const double* p = stack.patch(i * plan.n_t() + j);
      for (std::size_t r = 0; r < box.h; ++r)
        for (std::size_t c = 0; c < box.w; ++c) CHECK(p[r * box.w + c] == double(plan.f_positions[i] + r));
    }

  // time marker checks the time anchor of every patch too
  dsp::Spectrogram tm{std::vector<double>(64 * 48), 64, 48};
  for (std::size_t f = 0; f < 64; ++f)
    for (std::size_t t = 0; t < 48; ++t) tm.at(f, t) = double(t);
  PatchStack ts = scan(tm, box, plan);
  for (std::size_t i = 0; i < plan.n_f(); ++i)
    for (std::size_t j = 0; j < plan.n_t(); ++j) CHECK(ts.patch(i * plan.n_t() + j)[0] == double(plan.t_positions[j]));

  ScanPlan too_big = plan_from_steps(80, 48, box, 8, 32);
  CHECK_THROWS_AS(scan(s, box, too_big), Error);
}

TEST_CASE("default kernel set") {
  auto ks = default_kernel_set();
  REQUIRE(ks.size() == 12);
  CHECK(ks.front() == KernelBox{32, 16});
  CHECK(std::count(ks.begin(), ks.end(), KernelBox{256, 64}) == 1);
  for (std::size_t i = 1; i < ks.size(); ++i)
    CHECK(std::make_pair(ks[i - 1].h, ks[i - 1].w) < std::make_pair(ks[i].h, ks[i].w));
}

TEST_CASE("coverage_map examples") {
  auto full = coverage_map(32, 16, {32, 16}, plan_from_steps(32, 16, {32, 16}, 1, 1));
  CHECK(std::all_of(full.begin(), full.end(), [](std::size_t c) { return c == 1; }));

  ScanPlan p = plan_from_steps(70, 16, {32, 16}, 16, 1);
  auto cov = coverage_map(70, 16, {32, 16}, p);
  CHECK(*std::min_element(cov.begin(), cov.end()) >= 1);

  ScanPlan overlap{{0, 8}, {0}};
  auto ov = coverage_map(40, 16, {32, 16}, overlap);
  for (std::size_t f = 8; f < 32; ++f) CHECK(ov[f * 16 + 3] >= 2);
  CHECK(ov[0] == 1);
  CHECK(ov[39 * 16] == 1);
}

TEST_CASE("randomized scan invariants") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t F = 1 + rng() % 120, T = 1 + rng() % 80;
    KernelBox box{1 + rng() % F, 1 + rng() % T};
    ScanPlan plan;
    if (trial % 2) {
      plan = plan_from_steps(F, T, box, 1 + rng() % 40, 1 + rng() % 40);
    } else {
      const std::size_t nf = 1 + rng() % 12, nt = 1 + rng() % 12;
      Steps s = steps_from_counts(F, T, box, nf, nt);
      plan = plan_from_steps(F, T, box, s.f_step, s.t_step);
      if (nf > 1 && (F - box.h) % (nf - 1) == 0 && (F - box.h) >= nf - 1 && s.f_step <= box.h)
        CHECK(plan.n_f() == nf);
    }
    auto cov = coverage_map(F, T, box, plan);
    CHECK(*std::min_element(cov.begin(), cov.end()) >= 1);
    CHECK(std::is_sorted(plan.f_positions.begin(), plan.f_positions.end()));
    CHECK(std::adjacent_find(plan.f_positions.begin(), plan.f_positions.end()) == plan.f_positions.end());
    CHECK(plan.f_positions.back() == F - box.h);
    CHECK(plan.t_positions.back() == T - box.w);
    dsp::Spectrogram s = row_marker(F, T);
    PatchStack a = scan(s, box, plan), b = scan(s, box, plan);
    CHECK(a.count == plan.n_f() * plan.n_t());
    CHECK(a.values == b.values);
  }
}

TEST_CASE("usable_kernels drops oversized boxes and analyze reports them") {
  auto ks = usable_kernels(default_kernel_set(), 129, 61, false);
  for (const auto& k : ks) CHECK((k.h <= 129 && k.w <= 61));
  CHECK(ks.size() == 6);

  ScanSettings settings;
  auto rows = analyze(513, 311, default_kernel_set(), settings);
  REQUIRE(rows.size() == 12);
  for (const auto& r : rows) {
    CHECK(r.min_coverage >= 1);
    CHECK(r.patches == r.n_f * r.n_t);
  }
}

TEST_CASE("kernel list parsing") {
  auto ks = parse_kernel_list("16x8,32X8,32x16");
  REQUIRE(ks.size() == 3);
  CHECK(ks[2] == KernelBox{32, 16});
  CHECK(parse_kernel_list("default").size() == 12);
  CHECK_THROWS_AS(parse_kernel_list("16x"), Error);
  CHECK_THROWS_AS(parse_kernel_list("0x8"), Error);
  CHECK_FALSE(parse_kernel("16x8x2").has_value());
}
