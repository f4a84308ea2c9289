#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "parauni/flow.hpp"
#include "parauni/nn.hpp"
#include "parauni/optim.hpp"
#include "parauni/rewards.hpp"

namespace parauni {

struct GrpoConfig {
  int group_size = 8;      // G
  float clip_eps = 0.2f;   // use infinity for the unclipped objective
  float lr = 1e-4f;
  float noise_level = 0.7f;  // a
  int steps = 10;            // denoising steps per trajectory
  int inner_epochs = 1;
  float kl_coef = 0.0f;

  void validate() const;
};

struct RolloutGroup {
  int prompt_id = 0;
  std::vector<DenoiseTrajectory> trajectories;
  std::vector<double> rewards;
  // log-density of each recorded stochastic step, [trajectory][step]; NaN
  // for deterministic steps.
  std::vector<std::vector<double>> old_logprobs;
};

// G SDE trajectories from one shared initial noise; trajectory i draws its
// step noise from derive_seed(seed, {i}). Terminal samples are scored by
// `scorer`.
RolloutGroup rollout_group(const VelocityModel& model, const Condition& condition, int prompt_id,
                           const Scorer& scorer, const GrpoConfig& config, std::uint64_t seed,
                           const Shape& sample_shape);

inline constexpr double kAdvantageEps = 1e-8;

// (r - mean) / (population std + 1e-8). Throws DomainError for fewer than 2 rewards.
std::vector<double> advantages(std::span<const double> rewards);

// Condition for a prompt, rebuilt on the live graph so gradients reach the
// queries and the LIM.
using ConditionFn = std::function<Condition(int prompt_id)>;

struct Reference {
  const VelocityModel* model = nullptr;
  ConditionFn condition;
};

struct PolicyReport {
  double objective = 0.0;  // clipped surrogate summed over groups, trajectories and stochastic steps
  double mean_ratio = 1.0;
  double clip_fraction = 0.0;
  double kl = 0.0;
  double grad_norm = 0.0;
  bool skipped = false;  // every advantage was zero
};

// Clipped surrogate terms for the groups; the returned tensor is the
// objective to maximize (before the KL penalty). Exposed for tests.
Tensor grpo_objective(const VelocityModel& model, const ConditionFn& condition,
                      std::span<const RolloutGroup> groups, const GrpoConfig& config,
                      PolicyReport* report = nullptr);

// Gradient ascent on the objective (minus kl_coef·KL to the reference when
// set) with `optimizer`, inner_epochs times. A no-op when every advantage is
// zero. Throws DegenerateDensityError if a non-final step has zero stddev.
PolicyReport policy_update(const VelocityModel& model, const ConditionFn& condition,
                           std::span<const RolloutGroup> groups, const GrpoConfig& config,
                           AdamW& optimizer, const nn::ParamList& trainable, const Reference& reference = {},
                           float lr_scale = 1.0f);

}  // namespace parauni
