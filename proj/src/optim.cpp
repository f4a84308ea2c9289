#include "parauni/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace parauni {

void AdamW::step(const nn::ParamList& params, float lr_scale) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(config_.beta1), static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(config_.beta2), static_cast<double>(steps_));
  const float lr = config_.lr * lr_scale;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    if (!t.requires_grad() || !t.has_grad()) continue;
    auto& mom = moments_[p.name];
    if (mom.m.size() != t.numel()) {
      mom.m.assign(t.numel(), 0.0f);
      mom.v.assign(t.numel(), 0.0f);
    }
    auto w = t.mutable_data();
    auto g = t.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      mom.m[i] = config_.beta1 * mom.m[i] + (1.0f - config_.beta1) * g[i];
      mom.v[i] = config_.beta2 * mom.v[i] + (1.0f - config_.beta2) * g[i] * g[i];
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      w[i] -= lr * config_.weight_decay * w[i];
      w[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + config_.eps));
    }
  }
}

float cosine_lr_scale(std::int64_t step, std::int64_t total_steps) {
  if (total_steps <= 0) return 1.0f;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return static_cast<float>(0.5 * (1.0 + std::cos(std::numbers::pi * frac)));
}

}  // namespace parauni
