#pragma once

#include <cmath>

#include "tacovc/nn/tape.hpp"

namespace tacovc::nn {

// Learning rate decaying linearly from `init` to `final_value` over
// `decay_steps`, constant afterwards.
struct LinearDecayLr {
  float init = 1e-3f;
  float final_value = 1e-4f;
  int decay_steps = 10000;

  float at(int step) const {
    if (decay_steps <= 0 || step >= decay_steps) return final_value;
    const float frac = static_cast<float>(step) / static_cast<float>(decay_steps);
    return init + (final_value - init) * frac;
  }
};

struct AdamConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float clip_norm = 1.0f;  // global gradient norm clip; <= 0 disables
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  int stepCount() const { return t_; }

  void step(ParamSet& ps, float lr) {
    ++t_;
    float scale = 1.0f;
    if (cfg_.clip_norm > 0.0f) {
      double sq = 0.0;
      for (const auto& p : ps.items())
        if (p.trainable && p.grad.size() > 0) sq += static_cast<double>(p.grad.squaredNorm());
      const float norm = static_cast<float>(std::sqrt(sq));
      if (norm > cfg_.clip_norm) scale = cfg_.clip_norm / norm;
    }
    const float bc1 = 1.0f - std::pow(cfg_.beta1, static_cast<float>(t_));
    const float bc2 = 1.0f - std::pow(cfg_.beta2, static_cast<float>(t_));
    for (auto& p : ps.items()) {
      if (!p.trainable || p.grad.size() == 0) continue;
      if (p.adam_m.size() == 0) {
        p.adam_m = Mat::Zero(p.value.rows(), p.value.cols());
        p.adam_v = Mat::Zero(p.value.rows(), p.value.cols());
      }
      Mat g = p.grad * scale;
      p.adam_m = cfg_.beta1 * p.adam_m + (1.0f - cfg_.beta1) * g;
      p.adam_v = (cfg_.beta2 * p.adam_v.array() + (1.0f - cfg_.beta2) * g.array().square()).matrix();
      const auto mhat = p.adam_m.array() / bc1;
      const auto vhat = p.adam_v.array() / bc2;
      p.value.array() -= lr * mhat / (vhat.sqrt() + cfg_.eps);
    }
    ps.zeroGrads();
  }

 private:
  AdamConfig cfg_;
  int t_ = 0;
};

}  // namespace tacovc::nn
