#include "msn/scanner.hpp"

#include <algorithm>
#include <charconv>
#include <iostream>

#include "msn/error.hpp"

namespace msn::scanner {
namespace {

void check_fits(std::size_t F, std::size_t T, KernelBox box) {
  require(box.h >= 1 && box.w >= 1, Errc::invalid_argument, "kernel dimensions must be >= 1");
  require(box.h <= F && box.w <= T, Errc::invalid_argument,
          "kernel " + box.str() + " larger than spectrogram " + std::to_string(F) + "x" +
              std::to_string(T));
}

std::size_t axis_step(std::size_t extent, std::size_t size, std::size_t scans) {
  if (scans > 1) return std::max<std::size_t>(1, (extent - size) / (scans - 1));
  return extent - size;
}

std::vector<std::size_t> axis_anchors(std::size_t extent, std::size_t size, std::size_t step) {
  // A hop wider than the kernel would skip cells.
  step = std::min(step, size);
  const std::size_t last = extent - size;
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p <= last; p += step) out.push_back(p);
  if (out.back() != last) out.push_back(last);
  return out;
}

}  // namespace

Steps steps_from_counts(std::size_t F, std::size_t T, KernelBox box, std::size_t n_f,
                        std::size_t n_t) {
  check_fits(F, T, box);
  require(n_f >= 1 && n_t >= 1, Errc::invalid_argument, "scan counts must be >= 1");
  return {axis_step(F, box.h, n_f), axis_step(T, box.w, n_t)};
}

ScanPlan plan_from_steps(std::size_t F, std::size_t T, KernelBox box, std::size_t f_step,
                         std::size_t t_step) {
  check_fits(F, T, box);
  // A zero step is what the single-scan formula yields when the kernel spans the axis.
  if (f_step == 0 && F == box.h) f_step = 1;
  if (t_step == 0 && T == box.w) t_step = 1;
  require(f_step >= 1 && t_step >= 1, Errc::invalid_argument, "scan steps must be >= 1");
  return {axis_anchors(F, box.h, f_step), axis_anchors(T, box.w, t_step)};
}

PatchStack scan(const dsp::Spectrogram& spec, KernelBox box, const ScanPlan& plan) {
  const std::size_t F = spec.freq_bins, T = spec.frames;
  require(spec.values.size() == F * T, Errc::shape_mismatch, "spectrogram storage mismatch");
  require(!plan.f_positions.empty() && !plan.t_positions.empty(), Errc::shape_mismatch,
          "empty scan plan");
  require(plan.f_positions.back() + box.h <= F && plan.t_positions.back() + box.w <= T,
          Errc::shape_mismatch, "scan plan does not fit spectrogram");

  PatchStack stack;
  stack.box = box;
  stack.count = plan.count();
  stack.values.resize(stack.count * box.h * box.w);
  double* out = stack.values.data();
  for (std::size_t f0 : plan.f_positions) {
    for (std::size_t t0 : plan.t_positions) {
      for (std::size_t r = 0; r < box.h; ++r) {
        const double* row = spec.values.data() + (f0 + r) * T + t0;
        out = std::copy(row, row + box.w, out);
      }
    }
  }
  return stack;
}

std::vector<KernelBox> default_kernel_set() {
  std::vector<KernelBox> out;
  for (std::size_t h : {32, 64, 128, 256})
    for (std::size_t w : {16, 32, 64}) out.push_back({h, w});
  return out;
}

std::vector<std::size_t> coverage_map(std::size_t F, std::size_t T, KernelBox box,
                                      const ScanPlan& plan) {
  std::vector<std::size_t> cover(F * T, 0);
  for (std::size_t f0 : plan.f_positions)
    for (std::size_t t0 : plan.t_positions)
      for (std::size_t f = f0; f < std::min(F, f0 + box.h); ++f)
        for (std::size_t t = t0; t < std::min(T, t0 + box.w); ++t) ++cover[f * T + t];
  return cover;
}

ScanPlan make_plan(std::size_t F, std::size_t T, KernelBox box, const ScanSettings& settings) {
  if (settings.mode == ScanMode::count) {
    const Steps s = steps_from_counts(F, T, box, settings.n_f, settings.n_t);
    return plan_from_steps(F, T, box, s.f_step, s.t_step);
  }
  return plan_from_steps(F, T, box, settings.f_step, settings.t_step);
}

std::vector<KernelBox> usable_kernels(const std::vector<KernelBox>& kernels, std::size_t F,
                                      std::size_t T, bool warn) {
  std::vector<KernelBox> out;
  for (const KernelBox& k : kernels) {
    if (k.h <= F && k.w <= T) {
      out.push_back(k);
    } else if (warn) {
      std::cerr << "warning: skipping kernel " << k.str() << " (spectrogram is " << F << "x" << T
                << ")\n";
    }
  }
  return out;
}

std::vector<KernelReport> analyze(std::size_t F, std::size_t T,
                                  const std::vector<KernelBox>& kernels,
                                  const ScanSettings& settings) {
  std::vector<KernelReport> rows;
  for (const KernelBox& k : usable_kernels(kernels, F, T)) {
    const ScanPlan plan = make_plan(F, T, k, settings);
    const auto cover = coverage_map(F, T, k, plan);
    const auto [lo, hi] = std::minmax_element(cover.begin(), cover.end());
    rows.push_back({k, plan.n_f(), plan.n_t(), plan.count(), *lo, *hi,
                    plan.count() * k.h * k.w * sizeof(double)});
  }
  return rows;
}

std::optional<KernelBox> parse_kernel(const std::string& text) {
  const auto x = text.find_first_of("xX");
  if (x == std::string::npos) return std::nullopt;
  KernelBox box;
  const char* b = text.data();
  const char* e = b + text.size();
  auto r1 = std::from_chars(b, b + x, box.h);
  auto r2 = std::from_chars(b + x + 1, e, box.w);
  if (r1.ec != std::errc{} || r1.ptr != b + x || r2.ec != std::errc{} || r2.ptr != e)
    return std::nullopt;
  if (box.h == 0 || box.w == 0) return std::nullopt;
  return box;
}

std::vector<KernelBox> parse_kernel_list(const std::string& text) {
  if (text == "default") return default_kernel_set();
  std::vector<KernelBox> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item =
        text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    const auto box = parse_kernel(item);
    if (!box) fail(Errc::config, "bad kernel box '" + item + "' (expected HxW)");
    out.push_back(*box);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace msn::scanner
