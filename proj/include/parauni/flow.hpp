#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "parauni/condition.hpp"
#include "parauni/nn.hpp"
#include "parauni/rng.hpp"
#include "parauni/tensor.hpp"

namespace parauni {

// Rectified-flow interpolation x_t = alpha(t)·x0 + sigma(t)·eps with t=0 data
// and t=1 noise; alpha(t) = 1 - t, sigma(t) = t.
struct Schedule {
  static double alpha(double t) { return 1.0 - t; }
  static double sigma(double t) { return t; }
};

// v(x, t, c). `t` holds one time for the whole sample, or one per row of x
// when rowwise() is true.
class VelocityModel {
 public:
  virtual ~VelocityModel() = default;
  virtual Tensor velocity(const Tensor& x, std::span<const float> t, const Condition& c) const = 0;
  virtual bool rowwise() const { return false; }
};

inline Tensor velocity_at(const VelocityModel& model, const Tensor& x, float t, const Condition& c) {
  return model.velocity(x, std::span<const float>(&t, 1), c);
}

std::vector<float> sinusoidal_embedding(float t, std::size_t dim);

struct DenoiserConfig {
  std::size_t rows = 8;  // sample tokens
  std::size_t cols = 8;  // values per token
  std::size_t width = 32;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t cond_width = 32;
  float head_init_scale = 0.1f;  // output head starts near zero velocity

  void validate() const;
};

// Sample tokens (rows of an [rows, cols] sample) embedded to `width`, with a
// sinusoidal time embedding added, then blocks of self-attention,
// cross-attention over the condition and an MLP.
class Denoiser final : public VelocityModel {
 public:
  static Denoiser init(const DenoiserConfig& config, std::uint64_t seed);

  Tensor velocity(const Tensor& x, std::span<const float> t, const Condition& c) const override;

  const DenoiserConfig& config() const { return config_; }
  nn::ParamList params() const;  // "diffusion.*"

 private:
  struct Block {
    nn::LayerNorm ln_self;
    nn::MultiHeadAttention self_attn;
    nn::LayerNorm ln_cross;
    nn::MultiHeadAttention cross_attn;
    nn::LayerNorm ln_mlp;
    nn::Mlp mlp;
  };

  DenoiserConfig config_;
  nn::Linear embed_;
  Tensor pos_;  // [rows, width]
  nn::Linear time_proj_;
  std::vector<Block> blocks_;
  nn::LayerNorm ln_out_;
  nn::Linear head_;
};

// Small MLP velocity for rowwise toy tasks: input [x, time features, c].
// The condition, when given, is one row [1, cond_dim] shared by every sample.
class MlpVelocity final : public VelocityModel {
 public:
  static MlpVelocity init(std::size_t dim, std::size_t hidden, std::size_t cond_dim, std::uint64_t seed);

  Tensor velocity(const Tensor& x, std::span<const float> t, const Condition& c) const override;
  bool rowwise() const override { return true; }
  nn::ParamList params() const;

  static constexpr std::size_t kTimeFeatures = 8;

 private:
  std::size_t dim_ = 1, cond_dim_ = 0;
  nn::Linear in_, mid_, out_;
};

// Exact marginal velocity E[eps - x0 | x_t] for x0 ~ N(mean, stddev²) per
// coordinate under the linear schedule.
class GaussianVelocity final : public VelocityModel {
 public:
  GaussianVelocity(float mean, float stddev) : mean_(mean), stddev_(stddev) {}
  Tensor velocity(const Tensor& x, std::span<const float> t, const Condition& c) const override;
  bool rowwise() const override { return true; }

  // Expected squared error of the optimal predictor at time t, per coordinate.
  double bayes_mse(double t) const;

 private:
  float mean_, stddev_;
};

// alpha(t)·x0 + sigma(t)·eps. Throws DomainError for t outside [0, 1].
Tensor forward_corrupt(const Tensor& x0, float t, const Tensor& eps);

struct FlowExample {
  Tensor x0;
  Condition condition;
};

// Mean over examples of mean((v(x_t, c, t) - (eps - x0))²), t ~ U(0,1),
// eps ~ N(0, I). Rowwise models draw one t per row.
Tensor fm_loss(const VelocityModel& model, std::span<const FlowExample> batch, Rng& rng);

// One Gaussian transition x_{k} -> x_{k+1} from time t to t_next.
struct Transition {
  double t = 1.0;
  double t_next = 0.0;
  Tensor mean;
  float stddev = 0.0f;
};

struct DenoiseTrajectory {
  std::vector<Tensor> states;  // x at t = 1, 1 - 1/steps, ..., 0
  std::vector<Transition> transitions;
  std::uint64_t seed = 0;
  float noise_level = 0.0f;
};

// t_k = 1 - k/steps, k = 0..steps.
std::vector<double> time_grid(int steps);

// Diffusion coefficient a·sqrt(t / (1 - t)); at t = 1 the next grid time is
// used in the denominator. Zero on the final step.
double sde_sigma(double t, double t_next_on_grid, float noise_level);

// Mean of the Euler–Maruyama step. sigma2 = 0 reduces to the Euler ODE step
// x - Δ·v. Built from tensor ops so policy updates can differentiate it.
Tensor step_mean(const Tensor& x, const Tensor& v, double t, double dt, double sigma2);

Tensor sample_ode(const VelocityModel& model, const Condition& c, int steps, std::uint64_t seed,
                  const Shape& sample_shape);
// Same stepping as sample_ode, keeping every state.
DenoiseTrajectory sample_ode_trajectory(const VelocityModel& model, const Condition& c, int steps,
                                        std::uint64_t seed, const Shape& sample_shape);
DenoiseTrajectory sample_sde(const VelocityModel& model, const Condition& c, int steps,
                             float noise_level, std::uint64_t seed, const Shape& sample_shape);
// Starts from a given x at t = 1; `seed` drives only the per-step noise.
DenoiseTrajectory sample_sde(const VelocityModel& model, const Condition& c, int steps,
                             float noise_level, std::uint64_t seed, const Tensor& initial);

// log N(candidate; mean, stddev² I). Throws DegenerateDensityError for stddev 0.
double transition_logprob(const Transition& step, const Tensor& candidate);
// Differentiable form with the mean as a graph value.
Tensor transition_logprob(const Tensor& mean, float stddev, const Tensor& candidate);

}  // namespace parauni
