#include "parauni/flow.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "parauni/errors.hpp"
#include "parauni/ops.hpp"

namespace parauni {

namespace {


void check_times(std::span<const float> t, std::size_t rows, bool rowwise) {
  if (t.size() == 1) return;
  if (rowwise && t.size() == rows) return;
  throw ShapeError("got " + std::to_string(t.size()) + " times for " + std::to_string(rows) + " rows");
}

float time_of_row(std::span<const float> t, std::size_t row) { return t.size() == 1 ? t[0] : t[row]; }

// [t, t², sin(kπt), cos(kπt) for k = 1..3]
void mlp_time_features(float t, float* out) {
  out[0] = t;
  out[1] = t * t;
  for (int k = 1; k <= 3; ++k) {
    const double a = k * std::numbers::pi * t;
    out[2 * k] = static_cast<float>(std::sin(a));
    out[2 * k + 1] = static_cast<float>(std::cos(a));
  }
}

}  // namespace

std::vector<float> sinusoidal_embedding(float t, std::size_t dim) {
  std::vector<float> out(dim, 0.0f);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    const double arg = 1000.0 * t * freq;
    out[i] = static_cast<float>(std::sin(arg));
    out[half + i] = static_cast<float>(std::cos(arg));
  }
  return out;
}

void DenoiserConfig::validate() const {
  if (rows < 1 || cols < 1) throw ConfigError("diffusion sample shape must be nonempty");
  if (width < 2 || heads < 1 || width % heads != 0)
    throw ConfigError("diffusion.width (" + std::to_string(width) + ") must be divisible by diffusion.heads (" +
                      std::to_string(heads) + ")");
  if (blocks < 1) throw ConfigError("diffusion.blocks must be >= 1");
  if (cond_width < 1) throw ConfigError("diffusion.cond_width must be >= 1");
}

Denoiser Denoiser::init(const DenoiserConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Denoiser d;
  d.config_ = config;
  const std::size_t w = config.width;
  d.embed_ = nn::Linear::init(config.cols, w, rng, true);
  d.pos_ = Tensor::randn({config.rows, w}, rng, 0.1f, true);
  d.time_proj_ = nn::Linear::init(w, w, rng, true);
  for (std::size_t i = 0; i < config.blocks; ++i) {
    Block b{nn::LayerNorm::init(w, true),
            nn::MultiHeadAttention::init(w, w, config.heads, rng, true),
            nn::LayerNorm::init(w, true),
            nn::MultiHeadAttention::init(w, config.cond_width, config.heads, rng, true),
            nn::LayerNorm::init(w, true),
            nn::Mlp::init(w, w * nn::kMlpRatio, rng, true)};
    d.blocks_.push_back(std::move(b));
  }
  d.ln_out_ = nn::LayerNorm::init(w, true);
  d.head_ = nn::Linear::init(w, config.cols, rng, true);
  for (float& v : d.head_.weight.mutable_data()) v *= config.head_init_scale;
  return d;
}

Tensor Denoiser::velocity(const Tensor& x, std::span<const float> t, const Condition& c) const {
  if (x.rank() != 2 || x.dim(0) != config_.rows || x.dim(1) != config_.cols)
    throw ShapeError("denoiser expects a sample of shape [" + std::to_string(config_.rows) + "," +
                     std::to_string(config_.cols) + "], got " + shape_str(x.shape()));
  if (!c.c.defined() || c.c.rank() != 2 || c.c.dim(1) != config_.cond_width)
    throw ShapeError("denoiser condition must be [N, " + std::to_string(config_.cond_width) + "]");
  check_times(t, x.dim(0), false);

  Tensor temb = Tensor::from_data({config_.width}, sinusoidal_embedding(t[0], config_.width));
  Tensor h = ops::add(embed_(x), pos_);
  h = ops::add_row(h, time_proj_(ops::reshape(temb, {1, config_.width})));
  for (const auto& b : blocks_) {
    Tensor n = b.ln_self(h);
    h = ops::add(h, b.self_attn(n, n, false));
    h = ops::add(h, b.cross_attn(b.ln_cross(h), c.c, false));
    h = ops::add(h, b.mlp(b.ln_mlp(h)));
  }
  return head_(ln_out_(h));
}

nn::ParamList Denoiser::params() const {
  nn::ParamList out;
  embed_.collect(out, "diffusion.embed");
  out.push_back({"diffusion.pos", pos_});
  time_proj_.collect(out, "diffusion.time_proj");
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "diffusion.block" + std::to_string(i + 1);
    blocks_[i].ln_self.collect(out, p + ".ln_self");
    blocks_[i].self_attn.collect(out, p + ".self_attn");
    blocks_[i].ln_cross.collect(out, p + ".ln_cross");
    blocks_[i].cross_attn.collect(out, p + ".cross_attn");
    blocks_[i].ln_mlp.collect(out, p + ".ln_mlp");
    blocks_[i].mlp.collect(out, p + ".mlp");
  }
  ln_out_.collect(out, "diffusion.ln_out");
  head_.collect(out, "diffusion.head");
  return out;
}

MlpVelocity MlpVelocity::init(std::size_t dim, std::size_t hidden, std::size_t cond_dim, std::uint64_t seed) {
  if (dim < 1 || hidden < 1) throw ConfigError("mlp velocity needs dim >= 1 and hidden >= 1");
  Rng rng(seed);
  MlpVelocity m;
  m.dim_ = dim;
  m.cond_dim_ = cond_dim;
  m.in_ = nn::Linear::init(dim + kTimeFeatures + cond_dim, hidden, rng, true);
  m.mid_ = nn::Linear::init(hidden, hidden, rng, true);
  m.out_ = nn::Linear::init(hidden, dim, rng, true);
  return m;
}

Tensor MlpVelocity::velocity(const Tensor& x, std::span<const float> t, const Condition& c) const {
  if (x.rank() != 2 || x.dim(1) != dim_)
    throw ShapeError("mlp velocity expects [B, " + std::to_string(dim_) + "], got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0);
  check_times(t, rows, true);

  std::vector<float> feats(rows * kTimeFeatures);
  for (std::size_t r = 0; r < rows; ++r) mlp_time_features(time_of_row(t, r), &feats[r * kTimeFeatures]);
  std::vector<Tensor> parts{x, Tensor::from_data({rows, kTimeFeatures}, std::move(feats))};
  if (cond_dim_ > 0) {
    if (!c.c.defined() || c.c.numel() != cond_dim_)
      throw ShapeError("mlp velocity expects a condition with " + std::to_string(cond_dim_) + " values");
    Tensor row = ops::reshape(c.c, {1, cond_dim_});
    parts.push_back(ops::matmul(Tensor::full({rows, 1}, 1.0f), row));
  }
  Tensor h = ops::gelu(in_(ops::concat(parts, 1)));
  h = ops::gelu(mid_(h));
  return out_(h);
}

nn::ParamList MlpVelocity::params() const {
  nn::ParamList out;
  in_.collect(out, "velocity.in");
  mid_.collect(out, "velocity.mid");
  out_.collect(out, "velocity.out");
  return out;
}

Tensor GaussianVelocity::velocity(const Tensor& x, std::span<const float> t, const Condition&) const {
  const std::size_t rows = x.rank() == 0 ? 1 : x.dim(0);
  check_times(t, rows, true);
  const std::size_t per_row = x.numel() / rows;
  const double mu = mean_, s2 = static_cast<double>(stddev_) * stddev_;
  std::vector<float> out(x.numel());
  auto xs = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double tt = time_of_row(t, r);
    const double gain = (tt - (1 - tt) * s2) / ((1 - tt) * (1 - tt) * s2 + tt * tt);
    for (std::size_t j = 0; j < per_row; ++j) {
      const std::size_t i = r * per_row + j;
      out[i] = static_cast<float>(-mu + gain * (xs[i] - (1 - tt) * mu));
    }
  }
  return Tensor::from_data(x.shape(), std::move(out));
}

double GaussianVelocity::bayes_mse(double t) const {
  const double s2 = static_cast<double>(stddev_) * stddev_;
  const double num = t - (1 - t) * s2;
  return (1 + s2) - num * num / ((1 - t) * (1 - t) * s2 + t * t);
}

Tensor forward_corrupt(const Tensor& x0, float t, const Tensor& eps) {
  if (!(t >= 0.0f && t <= 1.0f)) throw DomainError("t = " + std::to_string(t) + " outside [0, 1]");
  if (x0.shape() != eps.shape())
    throw ShapeError("forward_corrupt: " + shape_str(x0.shape()) + " vs " + shape_str(eps.shape()));
  return ops::add(ops::scale(x0, static_cast<float>(Schedule::alpha(t))),
                  ops::scale(eps, static_cast<float>(Schedule::sigma(t))));
}

Tensor fm_loss(const VelocityModel& model, std::span<const FlowExample> batch, Rng& rng) {
  if (batch.empty()) throw EmptyError("fm_loss: empty batch");
  Tensor total;
  for (const auto& ex : batch) {
    const Tensor& x0 = ex.x0;
    const std::size_t rows = model.rowwise() && x0.rank() >= 1 ? x0.dim(0) : 1;
    const std::size_t per_row = x0.numel() / rows;
    std::vector<float> ts(rows);
    for (float& t : ts) t = rng.uniform();
    std::vector<float> xt(x0.numel()), target(x0.numel());
    auto xs = x0.data();
    for (std::size_t r = 0; r < rows; ++r) {
      const double a = Schedule::alpha(ts[r]), s = Schedule::sigma(ts[r]);
      for (std::size_t j = 0; j < per_row; ++j) {
        const std::size_t i = r * per_row + j;
        const float eps = rng.normal();
        xt[i] = static_cast<float>(a * xs[i] + s * eps);
        target[i] = eps - xs[i];
      }
    }
    Tensor v = model.velocity(Tensor::from_data(x0.shape(), std::move(xt)), ts, ex.condition);
    Tensor err = ops::mean(ops::square(ops::sub(v, Tensor::from_data(x0.shape(), std::move(target)))));
    total = total.defined() ? ops::add(total, err) : err;
  }
  return batch.size() == 1 ? total : ops::scale(total, 1.0f / static_cast<float>(batch.size()));
}

std::vector<double> time_grid(int steps) {
  if (steps < 1) throw DomainError("steps must be >= 1, got " + std::to_string(steps));
  std::vector<double> grid(static_cast<std::size_t>(steps) + 1);
  for (int k = 0; k <= steps; ++k) grid[k] = 1.0 - static_cast<double>(k) / steps;
  grid.back() = 0.0;
  return grid;
}

double sde_sigma(double t, double t_next_on_grid, float noise_level) {
  if (t_next_on_grid <= 0.0 || noise_level == 0.0f) return 0.0;
  const double denom = t >= 1.0 ? 1.0 - t_next_on_grid : 1.0 - t;
  return noise_level * std::sqrt(t / denom);
}

Tensor step_mean(const Tensor& x, const Tensor& v, double t, double dt, double sigma2) {
  if (sigma2 == 0.0) return ops::sub(x, ops::scale(v, static_cast<float>(dt)));
  const double k = sigma2 / (2.0 * t);
  const float cx = static_cast<float>(1.0 - dt * k);
  const float cv = static_cast<float>(dt * (1.0 + k * (1.0 - t)));
  return ops::sub(ops::scale(x, cx), ops::scale(v, cv));
}

namespace {

DenoiseTrajectory run_sampler(const VelocityModel& model, const Condition& c, int steps, float noise_level,
                              std::uint64_t seed, const Shape& shape, const Tensor* initial, bool keep_states) {
  if (!(noise_level >= 0.0f)) throw DomainError("noise level must be >= 0");
  const auto grid = time_grid(steps);
  NoGradGuard no_grad;
  Rng rng(seed);
  DenoiseTrajectory traj;
  traj.seed = seed;
  traj.noise_level = noise_level;
  Tensor x = initial ? initial->detach() : Tensor::randn(shape, rng);
  traj.states.push_back(x);
  for (int k = 0; k < steps; ++k) {
    const double t = grid[k], t_next = grid[k + 1], dt = t - t_next;
    const double sigma = sde_sigma(t, t_next, noise_level);
    Tensor v = velocity_at(model, x, static_cast<float>(t), c);
    Tensor mean = step_mean(x, v, t, dt, sigma * sigma);
    const float stddev = static_cast<float>(sigma * std::sqrt(dt));
    if (stddev > 0.0f) {
      std::vector<float> next(mean.data().begin(), mean.data().end());
      for (float& value : next) value += stddev * rng.normal();
      x = Tensor::from_data(shape, std::move(next));
    } else {
      x = mean;
    }
    if (keep_states) {
      traj.states.push_back(x);
      traj.transitions.push_back({t, t_next, mean, stddev});
    }
  }
  if (!keep_states) traj.states.push_back(x);
  return traj;
}

}  // namespace

Tensor sample_ode(const VelocityModel& model, const Condition& c, int steps, std::uint64_t seed,
                  const Shape& sample_shape) {
  return run_sampler(model, c, steps, 0.0f, seed, sample_shape, nullptr, false).states.back();
}

DenoiseTrajectory sample_ode_trajectory(const VelocityModel& model, const Condition& c, int steps,
                                        std::uint64_t seed, const Shape& sample_shape) {
  return run_sampler(model, c, steps, 0.0f, seed, sample_shape, nullptr, true);
}

DenoiseTrajectory sample_sde(const VelocityModel& model, const Condition& c, int steps, float noise_level,
                             std::uint64_t seed, const Shape& sample_shape) {
  return run_sampler(model, c, steps, noise_level, seed, sample_shape, nullptr, true);
}

DenoiseTrajectory sample_sde(const VelocityModel& model, const Condition& c, int steps, float noise_level,
                             std::uint64_t seed, const Tensor& initial) {
  return run_sampler(model, c, steps, noise_level, seed, initial.shape(), &initial, true);
}

double transition_logprob(const Transition& step, const Tensor& candidate) {
  if (!(step.stddev > 0.0f)) throw DegenerateDensityError("transition has zero standard deviation");
  if (candidate.shape() != step.mean.shape())
    throw ShapeError("candidate " + shape_str(candidate.shape()) + " vs mean " + shape_str(step.mean.shape()));
  const double s = step.stddev;
  const double norm = -std::log(s) - 0.5 * std::log(2.0 * std::numbers::pi);
  double acc = 0.0;
  auto m = step.mean.data(), x = candidate.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - m[i];
    acc += -d * d / (2.0 * s * s) + norm;
  }
  return acc;
}

Tensor transition_logprob(const Tensor& mean, float stddev, const Tensor& candidate) {
  if (!(stddev > 0.0f)) throw DegenerateDensityError("transition has zero standard deviation");
  const double s = stddev;
  const double norm = static_cast<double>(mean.numel()) * (-std::log(s) - 0.5 * std::log(2.0 * std::numbers::pi));
  Tensor quad = ops::sum(ops::square(ops::sub(candidate, mean)));
  return ops::add_scalar(ops::scale(quad, static_cast<float>(-1.0 / (2.0 * s * s))), static_cast<float>(norm));
}

}  // namespace parauni
