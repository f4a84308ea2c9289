#pragma once

// Central finite-difference oracle. The forward closure is evaluated on
// perturbed leaf values with the tape disabled; the scalar objective is a
// fixed random projection of the output accumulated in double, so it does
// not share the reduction path of the analytic side.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "parauni/ops.hpp"
#include "parauni/tensor.hpp"

namespace parauni::testing {

struct GradCheckResult {
  double rel_error = 0.0;  // ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

inline GradCheckResult gradcheck(const std::function<Tensor()>& forward, std::vector<Tensor> leaves,
                                 std::uint64_t projection_seed = 99, float h = 1e-3f) {
  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.clear_grad();
  }

  Tensor out = forward();
  Rng rng(projection_seed);
  std::vector<float> weights(out.numel());
  for (float& w : weights) w = rng.normal();

  Tensor w = Tensor::from_data(out.shape(), weights);
  ops::sum(ops::mul(out, w)).backward();

  auto objective = [&]() {
    NoGradGuard guard;
    Tensor y = forward();
    double acc = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) acc += static_cast<double>(weights[i]) * y[i];
    return acc;
  };

  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (auto& leaf : leaves) {
    auto values = leaf.mutable_data();
    std::vector<float> analytic(leaf.numel(), 0.0f);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const float orig = values[i];
      const float hi = orig + h, lo = orig - h;
      values[i] = hi;
      const double up = objective();
      values[i] = lo;
      const double down = objective();
      values[i] = orig;
      const double numeric = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      a2 += static_cast<double>(analytic[i]) * analytic[i];
      n2 += numeric * numeric;
    }
  }
  GradCheckResult r;
  r.analytic_norm = std::sqrt(a2);
  r.numeric_norm = std::sqrt(n2);
  r.rel_error = std::sqrt(diff2) / std::max({r.analytic_norm, r.numeric_norm, 1e-12});
  return r;
}

}  // namespace parauni::testing
