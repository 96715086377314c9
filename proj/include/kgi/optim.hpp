#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "kgi/util.hpp"

namespace kgi::optim {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled; applied as p -= lr*wd*p
};

// Returns the global L2 norm across all gradient groups and rescales them
// in place when the norm exceeds `max_norm`.
inline double clip_global_norm(std::span<const std::span<double>> grads, double max_norm) {
  double sq = 0.0;
  for (auto g : grads) {
    for (double v : g) sq += v * v;
  }
  double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    double scale = max_norm / norm;
    for (auto g : grads) {
      for (double& v : g) v *= scale;
    }
  }
  return norm;
}

// Adam over a fixed set of parameter groups. Moment buffers are laid out per
// group in the order given at construction.
class Adam {
 public:
  Adam(std::vector<std::size_t> group_sizes, AdamConfig cfg) : cfg_(cfg) {
    for (std::size_t n : group_sizes) {
      m_.emplace_back(n, 0.0);
      v_.emplace_back(n, 0.0);
    }
  }

  void step(double lr, std::span<const std::span<double>> params,
            std::span<const std::span<const double>> grads) {
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t g = 0; g < params.size(); ++g) {
      auto p = params[g];
      auto gr = grads[g];
      auto& m = m_[g];
      auto& v = v_[g];
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gr[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gr[i] * gr[i];
        double mhat = m[i] / bc1;
        double vhat = v[i] / bc2;
        if (cfg_.weight_decay != 0.0) p[i] -= lr * cfg_.weight_decay * p[i];
        p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
      }
    }
  }

  std::size_t steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace kgi::optim
