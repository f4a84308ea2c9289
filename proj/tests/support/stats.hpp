#pragma once

#include <cmath>
#include <span>

namespace parauni::testing {

// Sample mean and unbiased variance with their standard errors; the variance
// SE uses the fourth central moment so it holds for non-Gaussian samples.
struct Moments {
  double mean = 0, var = 0, mean_se = 0, var_se = 0;
};

inline Moments moments(std::span<const float> xs) {
  const double n = static_cast<double>(xs.size());
  double m = 0;
  for (float x : xs) m += x;
  m /= n;
  double m2 = 0, m4 = 0;
  for (float x : xs) {
    const double d = x - m;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  Moments r;
  r.mean = m;
  r.var = m2 / (n - 1);
  m2 /= n;
  m4 /= n;
  r.mean_se = std::sqrt(r.var / n);
  r.var_se = std::sqrt((m4 - m2 * m2) / n);
  return r;
}

}  // namespace parauni::testing
