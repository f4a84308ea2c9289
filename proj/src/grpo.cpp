#include "parauni/grpo.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "parauni/errors.hpp"
#include "parauni/ops.hpp"

namespace parauni {

namespace {
constexpr std::uint64_t kInitialNoiseStream = 0xffffffffULL;
}

void GrpoConfig::validate() const {
  if (group_size < 2) throw ConfigError("grpo.group_size must be >= 2");
  if (!(clip_eps > 0.0f)) throw ConfigError("grpo.clip_eps must be > 0");
  if (!(noise_level >= 0.0f)) throw ConfigError("grpo.noise_level must be >= 0");
  if (steps < 1) throw ConfigError("grpo.steps must be >= 1");
  if (inner_epochs < 1) throw ConfigError("grpo.inner_epochs must be >= 1");
  if (!(kl_coef >= 0.0f)) throw ConfigError("grpo.kl_coef must be >= 0");
}

RolloutGroup rollout_group(const VelocityModel& model, const Condition& condition, int prompt_id,
                           const Scorer& scorer, const GrpoConfig& config, std::uint64_t seed,
                           const Shape& sample_shape) {
  config.validate();
  RolloutGroup group;
  group.prompt_id = prompt_id;
  Rng init_rng(derive_seed(seed, {kInitialNoiseStream}));
  const Tensor initial = Tensor::randn(sample_shape, init_rng);
  for (int i = 0; i < config.group_size; ++i) {
    auto traj = sample_sde(model, condition, config.steps, config.noise_level,
                           derive_seed(seed, {static_cast<std::uint64_t>(i)}), initial);
    std::vector<double> lps;
    for (std::size_t k = 0; k < traj.transitions.size(); ++k) {
      const auto& tr = traj.transitions[k];
      lps.push_back(tr.stddev > 0.0f ? transition_logprob(tr, traj.states[k + 1])
                                     : std::numeric_limits<double>::quiet_NaN());
    }
    group.rewards.push_back(scorer.score(traj.states.back(), prompt_id));
    group.old_logprobs.push_back(std::move(lps));
    group.trajectories.push_back(std::move(traj));
  }
  return group;
}

std::vector<double> advantages(std::span<const double> rewards) {
  if (rewards.size() < 2) throw DomainError("advantages need a group of at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double denom = std::sqrt(var / n) + kAdvantageEps;
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - mean) / denom);
  return out;
}

namespace {

double log_normalizer(std::size_t dim, double stddev) {
  return static_cast<double>(dim) * (-std::log(stddev) - 0.5 * std::log(2.0 * std::numbers::pi));
}

bool all_zero(const std::vector<std::vector<double>>& adv) {
  for (const auto& g : adv)
    for (double a : g)
      if (a != 0.0) return false;
  return true;
}

// Every step but the final deterministic one must carry noise.
void check_stochastic(const DenoiseTrajectory& traj) {
  const std::size_t n = traj.transitions.size();
  if (n < 2) throw DegenerateDensityError("trajectory has no stochastic steps");
  for (std::size_t k = 0; k + 1 < n; ++k)
    if (!(traj.transitions[k].stddev > 0.0f))
      throw DegenerateDensityError("transition " + std::to_string(k) + " has zero standard deviation");
}

struct Terms {
  Tensor objective;
  Tensor kl;
};

Terms build_terms(const VelocityModel& model, const ConditionFn& condition, std::span<const RolloutGroup> groups,
                  const std::vector<std::vector<double>>& adv, const GrpoConfig& config, const Reference* reference,
                  PolicyReport* report) {
  const bool unclipped = std::isinf(config.clip_eps);
  const float lo = unclipped ? -std::numeric_limits<float>::max() : 1.0f - config.clip_eps;
  const float hi = unclipped ? std::numeric_limits<float>::max() : 1.0f + config.clip_eps;
  Terms terms;
  double ratio_sum = 0;
  std::size_t count = 0, clipped = 0;
  auto accumulate = [](Tensor& acc, const Tensor& t) { acc = acc.defined() ? ops::add(acc, t) : t; };

  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& group = groups[g];
    Condition c = condition(group.prompt_id);
    Condition c_ref;
    if (reference) {
      NoGradGuard no_grad;
      c_ref = reference->condition(group.prompt_id);
    }
    for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
      const auto& traj = group.trajectories[i];
      for (std::size_t k = 0; k + 1 < traj.transitions.size(); ++k) {
        const auto& tr = traj.transitions[k];
        const Tensor& x = traj.states[k];
        const Tensor& next = traj.states[k + 1];
        const double dt = tr.t - tr.t_next;
        const double sigma = sde_sigma(tr.t, tr.t_next, traj.noise_level);
        Tensor mean = step_mean(x, velocity_at(model, x, static_cast<float>(tr.t), c), tr.t, dt, sigma * sigma);

        const double s2 = static_cast<double>(tr.stddev) * tr.stddev;
        // log ρ = logπ_new − logπ_old with the Gaussian normalizer folded
        // into the offset.
        const double offset = log_normalizer(x.numel(), tr.stddev) - group.old_logprobs[i][k];
        Tensor quad = ops::sum(ops::square(ops::sub(next, mean)));
        Tensor ratio = ops::exp(ops::add_scalar(ops::scale(quad, static_cast<float>(-0.5 / s2)),
                                                static_cast<float>(offset)));
        const float a = static_cast<float>(adv[g][i]);
        Tensor term = ops::minimum(ops::scale(ratio, a), ops::scale(ops::clamp(ratio, lo, hi), a));
        accumulate(terms.objective, term);

        const float r = ratio.item();
        ratio_sum += r;
        ++count;
        if (r < lo || r > hi) ++clipped;

        if (reference) {
          Tensor ref_mean;
          {
            NoGradGuard no_grad;
            ref_mean = step_mean(x, velocity_at(*reference->model, x, static_cast<float>(tr.t), c_ref), tr.t, dt,
                                 sigma * sigma);
          }
          Tensor kl = ops::scale(ops::sum(ops::square(ops::sub(mean, ref_mean))), static_cast<float>(0.5 / s2));
          accumulate(terms.kl, kl);
        }
      }
    }
  }
  if (report) {
    report->objective = terms.objective.item();
    report->mean_ratio = count ? ratio_sum / static_cast<double>(count) : 1.0;
    report->clip_fraction = count ? static_cast<double>(clipped) / static_cast<double>(count) : 0.0;
    report->kl = terms.kl.defined() ? terms.kl.item() : 0.0;
  }
  return terms;
}

std::vector<std::vector<double>> group_advantages(std::span<const RolloutGroup> groups) {
  std::vector<std::vector<double>> adv;
  for (const auto& g : groups) {
    if (g.trajectories.size() != g.rewards.size() || g.trajectories.size() != g.old_logprobs.size())
      throw ShapeError("rollout group lengths disagree");
    for (const auto& traj : g.trajectories) check_stochastic(traj);
    adv.push_back(advantages(g.rewards));
  }
  return adv;
}

}  // namespace

Tensor grpo_objective(const VelocityModel& model, const ConditionFn& condition, std::span<const RolloutGroup> groups,
                      const GrpoConfig& config, PolicyReport* report) {
  config.validate();
  if (groups.empty()) throw EmptyError("grpo_objective: no rollout groups");
  const auto adv = group_advantages(groups);
  return build_terms(model, condition, groups, adv, config, nullptr, report).objective;
}

PolicyReport policy_update(const VelocityModel& model, const ConditionFn& condition,
                           std::span<const RolloutGroup> groups, const GrpoConfig& config, AdamW& optimizer,
                           const nn::ParamList& trainable, const Reference& reference, float lr_scale) {
  config.validate();
  if (groups.empty()) throw EmptyError("policy_update: no rollout groups");
  const auto adv = group_advantages(groups);
  PolicyReport report;
  if (all_zero(adv)) {
    report.skipped = true;
    return report;
  }
  const Reference* ref = reference.model ? &reference : nullptr;
  for (int epoch = 0; epoch < config.inner_epochs; ++epoch) {
    nn::clear_grads(trainable);
    Terms terms = build_terms(model, condition, groups, adv, config, ref, &report);
    Tensor loss = ops::scale(terms.objective, -1.0f);
    if (terms.kl.defined() && config.kl_coef > 0.0f) loss = ops::add(loss, ops::scale(terms.kl, config.kl_coef));
    loss.backward();
    report.grad_norm = grad_norm(trainable);
    optimizer.step(trainable, lr_scale);
  }
  return report;
}

}  // namespace parauni
