#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "entrack/tensor.hpp"

namespace entrack {

// A scalar function of a list of parameters, expressed as a graph builder:
// given a tape and leaves created from the current parameter values, return
// the scalar loss tensor. The builder must be deterministic; any dropout
// inside it is reproducible because grad_check seeds every tape identically.
using LossBuilder =
    std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct GradCheckParam {
  Shape shape;
  std::vector<double> value;
};

namespace detail {

inline double eval_loss(const LossBuilder& f,
                        const std::vector<GradCheckParam>& params,
                        uint64_t seed) {
  Tape tape(seed);
  std::vector<Tensor> leaves;
  leaves.reserve(params.size());
  for (const GradCheckParam& p : params) {
    leaves.push_back(tape.leaf(p.shape, p.value, false));
  }
  Tensor loss = f(tape, leaves);
  if (loss.size() != 1) {
    throw std::invalid_argument("grad_check: function must produce a scalar");
  }
  return loss.scalar();
}

}  // namespace detail

// Compares the analytic gradient of f against central finite differences
// and returns the max over coordinates of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
// Rejects epsilon <= 0 and non-deterministic builders (two forward passes
// that disagree bit for bit).
inline double grad_check(const LossBuilder& f,
                         std::vector<GradCheckParam> params,
                         double epsilon = 1e-4, uint64_t seed = 0x5eedULL) {
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("grad_check: epsilon must be positive");
  }
  double v1 = detail::eval_loss(f, params, seed);
  double v2 = detail::eval_loss(f, params, seed);
  if (v1 != v2) {
    throw std::runtime_error(
        "grad_check: function is not deterministic (forward passes disagree)");
  }

  // Analytic pass.
  Tape tape(seed);
  std::vector<Tensor> leaves;
  leaves.reserve(params.size());
  for (const GradCheckParam& p : params) {
    leaves.push_back(tape.leaf(p.shape, p.value, true));
  }
  Tensor loss = f(tape, leaves);
  if (loss.size() != 1) {
    throw std::invalid_argument("grad_check: function must produce a scalar");
  }
  GradientMap grads = tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& leaf : leaves) {
    std::span<const double> g = grads.at(leaf);
    analytic.emplace_back(g.begin(), g.end());
  }

  double worst = 0.0;
  for (size_t p = 0; p < params.size(); ++p) {
    for (size_t i = 0; i < params[p].value.size(); ++i) {
      double saved = params[p].value[i];
      params[p].value[i] = saved + epsilon;
      double up = detail::eval_loss(f, params, seed);
      params[p].value[i] = saved - epsilon;
      double down = detail::eval_loss(f, params, seed);
      params[p].value[i] = saved;
      double numeric = (up - down) / (2.0 * epsilon);
      double a = analytic[p][i];
      double err = std::fabs(a - numeric) /
                   std::max({std::fabs(a), std::fabs(numeric), 1e-6});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace entrack
