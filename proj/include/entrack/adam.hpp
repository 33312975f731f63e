#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "entrack/params.hpp"

namespace entrack {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// ADAM with bias correction. Moment buffers live on the Param and are
// allocated on first use; step count is shared across all parameters.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  int64_t steps() const { return t_; }

  // grads[i] must match store.all()[i] in size. Entries may be empty spans
  // to skip a parameter this step.
  void step(ParamStore& store, const std::vector<std::span<const double>>& grads) {
    if (grads.size() != store.size()) {
      throw std::invalid_argument("adam: gradient list does not match store");
    }
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < grads.size(); ++i) {
      Param& p = store.all()[i];
      std::span<const double> g = grads[i];
      if (g.empty()) continue;
      if (g.size() != p.value.size()) {
        throw std::invalid_argument("adam: gradient size mismatch for '" +
                                    p.name + "'");
      }
      if (p.m.empty()) {
        p.m.assign(p.value.size(), 0.0);
        p.v.assign(p.value.size(), 0.0);
      }
      for (size_t k = 0; k < p.value.size(); ++k) {
        p.m[k] = cfg_.beta1 * p.m[k] + (1.0 - cfg_.beta1) * g[k];
        p.v[k] = cfg_.beta2 * p.v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
        double mhat = p.m[k] / bc1;
        double vhat = p.v[k] / bc2;
        p.value[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

 private:
  AdamConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace entrack
