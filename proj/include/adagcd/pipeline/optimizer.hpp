#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <vector>

#include "adagcd/autodiff.hpp"
#include "adagcd/pipeline/config.hpp"

namespace adagcd {

inline double scheduled_lr(const OptimConfig& cfg, std::size_t step, std::size_t total_steps) {
  if (cfg.schedule == "constant" || total_steps == 0) return cfg.lr;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

// Gradient step shared by both algorithms: optional global-norm clipping, L2
// weight decay folded into the gradient, and a per-parameter lr_scale.
//   sgd:  v ← μ·v + g;                θ ← θ − lr·v
//   adam: m ← β1·m + (1−β1)·g;  s ← β2·s + (1−β2)·g²;
//         θ ← θ − lr·m̂/(√ŝ + ε), β1 = optim.momentum, β2 = 0.999
class Optimizer {
 public:
  explicit Optimizer(const OptimConfig& cfg) : cfg_(cfg), adam_(cfg.algorithm == "adam") {}

  // Returns the gradient norm before clipping.
  double step(const std::vector<Parameter*>& params, double lr) {
    double sq = 0.0;
    for (const Parameter* p : params)
      if (p->trainable)
        for (double g : p->grad.data()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
    const double clip = (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip) ? cfg_.grad_clip / norm : 1.0;
    ++t_;
    const double b1 = cfg_.momentum;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (Parameter* p : params) {
      if (!p->trainable) continue;
      State& st = state_.try_emplace(p, p->value.rows(), p->value.cols()).first->second;
      const double rate = lr * p->lr_scale;
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        const double g = clip * p->grad[i] + cfg_.weight_decay * p->value[i];
        if (adam_) {
          st.m[i] = b1 * st.m[i] + (1.0 - b1) * g;
          st.s[i] = beta2 * st.s[i] + (1.0 - beta2) * g * g;
          p->value[i] -= rate * (st.m[i] / c1) / (std::sqrt(st.s[i] / c2) + epsilon);
        } else {
          st.m[i] = b1 * st.m[i] + g;
          p->value[i] -= rate * st.m[i];
        }
      }
    }
    return norm;
  }

  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;

 private:
  struct State {
    State(std::size_t r, std::size_t c) : m(r, c), s(r, c) {}
    Matrix m;
    Matrix s;
  };

  OptimConfig cfg_;
  bool adam_;
  std::size_t t_ = 0;
  std::map<const Parameter*, State> state_;
};

}  // namespace adagcd
