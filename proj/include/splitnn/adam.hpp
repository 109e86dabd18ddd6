#pragma once

#include <cmath>
#include <cstdint>

#include "splitnn/tensor.hpp"

namespace splitnn {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One state per parameter tensor; t counts completed steps.
struct AdamState {
  Tensor m, v;
  std::uint64_t t = 0;

  void init(const std::vector<std::size_t>& shape) {
    m = Tensor(shape);
    v = Tensor(shape);
    t = 0;
  }
};

inline void adam_step(Tensor& param, const Tensor& grad, AdamState& s, const AdamConfig& cfg) {
  require(param.same_shape(grad), "adam_step: gradient shape mismatch");
  if (s.m.size() != param.size()) s.init(param.shape);
  s.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(s.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(s.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad.data[i];
    s.m.data[i] = cfg.beta1 * s.m.data[i] + (1.0 - cfg.beta1) * g;
    s.v.data[i] = cfg.beta2 * s.v.data[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = s.m.data[i] / bc1;
    const double vhat = s.v.data[i] / bc2;
    param.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
  check_finite(param, "adam_step");
}

}  // namespace splitnn
