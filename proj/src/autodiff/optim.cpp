#include "msn/autodiff/optim.hpp"

#include <cmath>

namespace msn::ad {

Tensor he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(std::max<std::size_t>(1, fan_in))));
  std::vector<double> v(numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

void zero_grads(const std::vector<Parameter>& params) {
  for (const Parameter& p : params) {
    Tensor t = p.value;
    t.zero_grad();
  }
}

std::size_t parameter_count(const std::vector<Parameter>& params) {
  std::size_t n = 0;
  for (const Parameter& p : params) n += p.value.numel();
  return n;
}

Adam::Adam(std::vector<Parameter> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const Parameter& p : params_) {
    m_.emplace_back(p.value.numel(), 0.0);
    v_.emplace_back(p.value.numel(), 0.0);
  }
}

void Adam::step() {
  ++steps_;
  const double c1 = 1.0 - std::pow(options_.beta1, double(steps_));
  const double c2 = 1.0 - std::pow(options_.beta2, double(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor t = params_[k].value;
    if (!t.has_grad()) continue;
    auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g[i];
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
    }
  }
}

}  // namespace msn::ad
