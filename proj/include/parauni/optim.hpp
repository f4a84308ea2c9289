#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "parauni/nn.hpp"

namespace parauni {

struct AdamWConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.05f;
};

// Adam with decoupled weight decay. Moments are keyed by parameter name so
// they survive a checkpoint round trip.
class AdamW {
 public:
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };

  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  // Updates every parameter that requires grad and holds a gradient;
  // lr_scale multiplies the base rate (for schedules).
  void step(const nn::ParamList& params, float lr_scale = 1.0f);

  const AdamWConfig& config() const { return config_; }
  AdamWConfig& config() { return config_; }
  std::int64_t steps() const { return steps_; }
  void set_steps(std::int64_t steps) { steps_ = steps; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  std::map<std::string, Moments>& moments() { return moments_; }

 private:
  AdamWConfig config_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

// Multiplier for a cosine decay from 1 to 0 over total_steps.
float cosine_lr_scale(std::int64_t step, std::int64_t total_steps);

}  // namespace parauni
