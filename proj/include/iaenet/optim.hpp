// Rectified Adam over a Weights tree.
#pragma once

#include <cmath>
#include <cstddef>

#include "iaenet/model.hpp"

namespace iaenet {

struct RadamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class S>
class Radam {
 public:
  Radam(const Weights<S>& shape, RadamConfig cfg)
      : cfg_(cfg), m_(Weights<S>::shaped_like(shape)), v_(Weights<S>::shaped_like(shape)) {}

  std::size_t steps() const { return t_; }

  void step(Weights<S>& params, const Weights<S>& grads) {
    ++t_;
    const double t = static_cast<double>(t_);
    const double b1t = std::pow(cfg_.beta1, t), b2t = std::pow(cfg_.beta2, t);
    const double rho_inf = 2.0 / (1.0 - cfg_.beta2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
    const bool rectify = rho_t > 5.0;
    double scale = cfg_.lr / (1.0 - b1t);
    if (rectify) {
      const double r = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
      scale *= r * std::sqrt(1.0 - b2t);
    }
    auto p = params.tensors();
    auto g = grads.tensors();
    auto m = m_.tensors();
    auto v = v_.tensors();
    const S b1 = static_cast<S>(cfg_.beta1), b2 = static_cast<S>(cfg_.beta2), eps = static_cast<S>(cfg_.eps);
    for (std::size_t k = 0; k < p.size(); ++k) {
      auto& mk = *m[k].second;
      auto& vk = *v[k].second;
      const auto& gk = *g[k].second;
      mk = b1 * mk + (S(1) - b1) * gk;
      vk = b2 * vk + (S(1) - b2) * gk.cwiseAbs2();
      if (rectify)
        p[k].second->array() -= static_cast<S>(scale) * mk.array() / (vk.array().sqrt() + eps);
      else
        p[k].second->array() -= static_cast<S>(scale) * mk.array();
    }
  }

 private:
  RadamConfig cfg_;
  Weights<S> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace iaenet
