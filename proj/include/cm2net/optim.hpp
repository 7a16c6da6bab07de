#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "cm2net/autodiff.hpp"

namespace cm2 {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
class AdamW {
 public:
  struct Moments {
    Tensor first;
    Tensor second;
  };

  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// Updates every non-frozen parameter whose gradient came from the last
  /// backward pass. Frozen parameters are left untouched.
  void step(std::span<Parameter* const> params, double lr) {
    for (const Parameter* p : params) {
      if (!p->frozen && !p->grad_ready) throw TapeError("adamw_step: parameter '" + p->name + "' has no gradient");
    }
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (Parameter* p : params) {
      if (p->frozen) continue;
      auto [it, inserted] = moments_.try_emplace(p->name);
      if (inserted) it->second = Moments{Tensor::zeros(p->value.shape()), Tensor::zeros(p->value.shape())};
      auto m = it->second.first.data();
      auto v = it->second.second.data();
      auto g = p->grad.data();
      auto w = p->value.data();
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double m_hat = m[i] / bc1;
        const double v_hat = v[i] / bc2;
        w[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * w[i]);
      }
      p->grad_ready = false;
    }
  }

  std::uint64_t steps() const noexcept { return steps_; }
  const AdamWConfig& config() const noexcept { return cfg_; }
  const Moments& moments(const std::string& name) const { return moments_.at(name); }

 private:
  AdamWConfig cfg_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

/// 0.5 * lr0 * (1 + cos(pi * step / total_steps)).
inline double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr0) {
  if (total_steps == 0 || step > total_steps) {
    throw ConfigError("cosine_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  if (step == total_steps) return 0.0;
  return 0.5 * lr0 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total_steps)));
}

}  // namespace cm2
