#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "msn/dsp.hpp"

namespace msn::scanner {

/// h bins along frequency, w frames along time.
struct KernelBox {
  std::size_t h = 1;
  std::size_t w = 1;

  friend bool operator==(const KernelBox&, const KernelBox&) = default;
  std::string str() const { return std::to_string(h) + "x" + std::to_string(w); }
};

struct Steps {
  std::size_t f_step = 1;
  std::size_t t_step = 1;
};

/// Anchor positions of every patch a kernel extracts.
struct ScanPlan {
  std::vector<std::size_t> f_positions;
  std::vector<std::size_t> t_positions;

  std::size_t n_f() const { return f_positions.size(); }
  std::size_t n_t() const { return t_positions.size(); }
  std::size_t count() const { return n_f() * n_t(); }
};

/// count() patches of h x w, stored contiguously patch-major then row-major.
struct PatchStack {
  KernelBox box;
  std::size_t count = 0;
  std::vector<double> values;

  const double* patch(std::size_t i) const { return values.data() + i * box.h * box.w; }
};

/// Step sizes that yield n_f x n_t scans of a kernel over an F x T grid.
Steps steps_from_counts(std::size_t F, std::size_t T, KernelBox box, std::size_t n_f,
                        std::size_t n_t);

/// Anchors every step, plus the far boundary (F - h, T - w). The effective step is
/// capped at the kernel extent, so every cell is covered.
ScanPlan plan_from_steps(std::size_t F, std::size_t T, KernelBox box, std::size_t f_step,
                         std::size_t t_step);

/// patches[i * n_t + j] = spec[f_i : f_i + h, t_j : t_j + w].
PatchStack scan(const dsp::Spectrogram& spec, KernelBox box, const ScanPlan& plan);

/// h in {32, 64, 128, 256} crossed with w in {16, 32, 64}.
std::vector<KernelBox> default_kernel_set();

/// Entry (f, t) counts the patches covering that cell; frequency-major F x T.
std::vector<std::size_t> coverage_map(std::size_t F, std::size_t T, KernelBox box,
                                      const ScanPlan& plan);

enum class ScanMode { step, count };

struct ScanSettings {
  ScanMode mode = ScanMode::step;
  std::size_t f_step = 8;
  std::size_t t_step = 32;
  std::size_t n_f = 4;
  std::size_t n_t = 4;
};

/// Resolves a plan for either mode; count mode converts counts to steps first.
ScanPlan make_plan(std::size_t F, std::size_t T, KernelBox box, const ScanSettings& settings);

/// Kernels that fit inside F x T. Oversized ones are dropped with a warning on stderr.
std::vector<KernelBox> usable_kernels(const std::vector<KernelBox>& kernels, std::size_t F,
                                      std::size_t T, bool warn = true);

struct KernelReport {
  KernelBox box;
  std::size_t n_f = 0;
  std::size_t n_t = 0;
  std::size_t patches = 0;
  std::size_t min_coverage = 0;
  std::size_t max_coverage = 0;
  std::size_t patch_bytes = 0;
};

/// Per-kernel scan statistics used by the scan-analyze command.
std::vector<KernelReport> analyze(std::size_t F, std::size_t T,
                                  const std::vector<KernelBox>& kernels,
                                  const ScanSettings& settings);

std::optional<KernelBox> parse_kernel(const std::string& text);
std::vector<KernelBox> parse_kernel_list(const std::string& text);

}  // namespace msn::scanner
