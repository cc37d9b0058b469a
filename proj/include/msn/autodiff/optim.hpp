#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "msn/autodiff/tensor.hpp"

namespace msn::ad {

/// A named trainable tensor. The handle aliases the owning layer's storage.
struct Parameter {
  std::string name;
  Tensor value;
};

/// Non-trainable persistent state such as normalization running statistics.
struct Buffer {
  std::string name;
  std::vector<double>* values = nullptr;
};

/// Fan-in scaled normal init: N(0, 2 / fan_in).
Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

void zero_grads(const std::vector<Parameter>& params);
std::size_t parameter_count(const std::vector<Parameter>& params);

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Parameter> params, AdamOptions options = {});

  void step();
  void zero_grad() { zero_grads(params_); }

  const std::vector<Parameter>& params() const { return params_; }
  const AdamOptions& options() const { return options_; }
  std::size_t steps() const { return steps_; }

  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void set_steps(std::size_t steps) { steps_ = steps; }

 private:
  std::vector<Parameter> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

}  // namespace msn::ad
