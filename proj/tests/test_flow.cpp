#include <cmath>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "parauni/errors.hpp"
#include "parauni/flow.hpp"
#include "parauni/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/stats.hpp"

using namespace parauni;
using parauni::testing::gradcheck;

namespace {

std::vector<float> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

struct ZeroVelocity final : VelocityModel {
  Tensor velocity(const Tensor& x, std::span<const float>, const Condition&) const override {
    return Tensor::zeros(x.shape());
  }
};

// Knows the single data point, so (x_t - x0)/t recovers eps - x0 exactly.
struct OracleVelocity final : VelocityModel {
  Tensor x0;
  Tensor velocity(const Tensor& x, std::span<const float> t, const Condition&) const override {
    std::vector<float> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x[i] - x0[i]) / t[0];
    return Tensor::from_data(x.shape(), out);
  }
};

DenoiserConfig tiny_denoiser() {
  DenoiserConfig c;
  c.rows = 2;
  c.cols = 3;
  c.width = 4;
  c.heads = 2;
  c.blocks = 1;
  c.cond_width = 5;
  // A unit-scale head keeps interior gradients well above the f32
  // finite-difference noise floor.
  c.head_init_scale = 1.0f;
  return c;
}

}  // namespace

TEST_CASE("schedule boundaries and monotonicity") {
  CHECK(Schedule::alpha(0) == 1.0);
  CHECK(Schedule::alpha(1) == 0.0);
  CHECK(Schedule::sigma(0) == 0.0);
  CHECK(Schedule::sigma(1) == 1.0);
  for (int i = 1; i <= 1000; ++i) {
    const double a = (i - 1) / 1000.0, b = i / 1000.0;
    CHECK(Schedule::alpha(b) < Schedule::alpha(a));
    CHECK(Schedule::sigma(b) > Schedule::sigma(a));
  }
}

TEST_CASE("forward_corrupt examples") {
  Rng rng(1);
  Tensor x0 = Tensor::randn({3, 2}, rng), eps = Tensor::randn({3, 2}, rng);
  CHECK(vec(forward_corrupt(x0, 0.0f, eps)) == vec(x0));
  CHECK(vec(forward_corrupt(x0, 1.0f, eps)) == vec(eps));
  CHECK(forward_corrupt(Tensor::scalar(2.0f), 0.5f, Tensor::scalar(0.0f)).item() == 1.0f);
  CHECK_THROWS_AS(forward_corrupt(x0, 1.5f, eps), DomainError);
  CHECK_THROWS_AS(forward_corrupt(x0, -0.1f, eps), DomainError);
  CHECK_THROWS_AS(forward_corrupt(x0, 0.5f, Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("fm_loss examples") {
  Rng data(2);
  OracleVelocity oracle;
  oracle.x0 = Tensor::randn({4, 3}, data);
  std::vector<FlowExample> one{{oracle.x0, {}}};
  Rng rng(3);
  for (int i = 0; i < 50; ++i) CHECK(fm_loss(oracle, one, rng).item() < 1e-6f);

  // Zero predictor: E‖eps − x0‖²/dim = 1 + E[x0²] = 2 for unit-normal data.
  std::vector<FlowExample> batch;
  for (int i = 0; i < 2000; ++i) batch.push_back({Tensor::randn({1, 8}, data), {}});
  ZeroVelocity zero;
  CHECK(fm_loss(zero, batch, rng).item() == doctest::Approx(2.0).epsilon(0.05));

  auto den = Denoiser::init(tiny_denoiser(), 4);
  Rng crng(5);
  Condition c{Tensor::randn({3, 5}, crng)};
  std::vector<FlowExample> small{{Tensor::randn({2, 3}, data), c}, {Tensor::randn({2, 3}, data), c}};
  for (int i = 0; i < 10; ++i) CHECK(fm_loss(den, small, rng).item() >= 0.0f);

  CHECK_THROWS_AS(fm_loss(zero, std::span<const FlowExample>{}, rng), EmptyError);
}

TEST_CASE("fm_loss gradient matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto den = Denoiser::init(tiny_denoiser(), seed);
    Rng data(100 + seed);
    Tensor cond = Tensor::randn({3, 5}, data);
    std::vector<FlowExample> batch{{Tensor::randn({2, 3}, data), {cond}}};
    std::vector<Tensor> leaves;
    for (const auto& p : den.params()) leaves.push_back(p.tensor);
    leaves.push_back(cond);
    auto r = gradcheck(
        [&]() {
          Rng rng(seed);
          return fm_loss(den, batch, rng);
        },
        leaves);
    CHECK(r.rel_error < 1e-3);
    CHECK(r.analytic_norm > 0.0);
  }
}

TEST_CASE("denoiser shape contract") {
  auto den = Denoiser::init(tiny_denoiser(), 1);
  Condition c{Tensor::zeros({7, 5})};
  CHECK(velocity_at(den, Tensor::zeros({2, 3}), 0.3f, c).shape() == Shape{2, 3});
  CHECK_THROWS_AS(velocity_at(den, Tensor::zeros({3, 2}), 0.3f, c), ShapeError);
  CHECK_THROWS_AS(velocity_at(den, Tensor::zeros({2, 3}), 0.3f, Condition{Tensor::zeros({7, 4})}), ShapeError);
  auto bad = tiny_denoiser();
  bad.heads = 3;
  CHECK_THROWS_AS(Denoiser::init(bad, 1), ConfigError);
}

TEST_CASE("mlp velocity uses the condition") {
  auto m = MlpVelocity::init(2, 16, 3, 7);
  Tensor x = Tensor::from_data({2, 2}, {0.1f, 0.2f, -0.3f, 0.4f});
  std::vector<float> ts{0.2f, 0.9f};
  Tensor a = m.velocity(x, ts, {Tensor::from_data({1, 3}, {1, 0, 0})});
  Tensor b = m.velocity(x, ts, {Tensor::from_data({1, 3}, {0, 1, 0})});
  CHECK(a.shape() == Shape{2, 2});
  CHECK(vec(a) != vec(b));
  Tensor cond = Tensor::from_data({1, 3}, {0.5f, -0.5f, 0.1f});
  std::vector<Tensor> leaves{cond};
  for (const auto& p : m.params()) leaves.push_back(p.tensor);
  auto r = gradcheck([&]() { return m.velocity(x, ts, {cond}); }, leaves);
  CHECK(r.rel_error < 1e-3);
}

TEST_CASE("time grid and sigma") {
  auto g = time_grid(4);
  CHECK(g == std::vector<double>{1.0, 0.75, 0.5, 0.25, 0.0});
  CHECK_THROWS_AS(time_grid(0), DomainError);
  CHECK(sde_sigma(0.25, 0.0, 0.7f) == 0.0);
  CHECK(sde_sigma(0.5, 0.25, 0.7f) == doctest::Approx(0.7));
  // t = 1 uses 1 - t_1 in the denominator.
  CHECK(sde_sigma(1.0, 0.75, 0.5f) == doctest::Approx(0.5 * std::sqrt(1.0 / 0.25)));
  CHECK(sde_sigma(0.5, 0.25, 0.0f) == 0.0);
}

TEST_CASE("sample_ode examples") {
  auto den = Denoiser::init(tiny_denoiser(), 3);
  Rng crng(1);
  Condition c{Tensor::randn({3, 5}, crng)};
  CHECK(vec(sample_ode(den, c, 5, 42, {2, 3})) == vec(sample_ode(den, c, 5, 42, {2, 3})));
  CHECK(vec(sample_ode(den, c, 5, 42, {2, 3})) != vec(sample_ode(den, c, 5, 43, {2, 3})));

  ZeroVelocity zero;
  Rng noise(9);
  Tensor x1 = Tensor::randn({2, 3}, noise);
  CHECK(vec(sample_ode(zero, {}, 7, 9, {2, 3})) == vec(x1));
  CHECK_THROWS_AS(sample_ode(zero, {}, 0, 9, {2, 3}), DomainError);
}

TEST_CASE("ODE transports noise to the analytic Gaussian") {
  const float mu = 1.5f, s = 0.5f;
  GaussianVelocity v(mu, s);
  Tensor x = sample_ode(v, {}, 400, 11, {10000, 1});
  auto m = testing::moments(x.data());
  CHECK(std::fabs(m.mean - mu) < 3 * m.mean_se);
  CHECK(std::fabs(m.var - double(s) * s) < 3 * m.var_se);
}

TEST_CASE("sample_sde examples") {
  auto den = Denoiser::init(tiny_denoiser(), 5);
  Rng crng(2);
  Condition c{Tensor::randn({3, 5}, crng)};
  auto ode = sample_ode_trajectory(den, c, 6, 17, {2, 3});
  auto sde0 = sample_sde(den, c, 6, 0.0f, 17, {2, 3});
  REQUIRE(sde0.states.size() == 7);
  for (std::size_t k = 0; k < 7; ++k) CHECK(vec(sde0.states[k]) == vec(ode.states[k]));
  CHECK(vec(sample_ode(den, c, 6, 17, {2, 3})) == vec(ode.states.back()));

  auto a = sample_sde(den, c, 6, 0.7f, 17, {2, 3}), b = sample_sde(den, c, 6, 0.7f, 17, {2, 3});
  REQUIRE(a.states.size() == 7);
  REQUIRE(a.transitions.size() == 6);
  for (std::size_t k = 0; k < 7; ++k) CHECK(vec(a.states[k]) == vec(b.states[k]));
  CHECK(vec(a.states.back()) != vec(ode.states.back()));
  for (std::size_t k = 0; k < 6; ++k) {
    const auto& tr = a.transitions[k];
    CHECK(tr.stddev >= 0.0f);
    if (k + 1 < 6) {
      CHECK(tr.stddev > 0.0f);
      CHECK(std::isfinite(transition_logprob(tr, a.states[k + 1])));
    } else {
      CHECK(tr.stddev == 0.0f);
      CHECK(vec(tr.mean) == vec(a.states[k + 1]));
    }
  }
  CHECK_THROWS_AS(sample_sde(den, c, 6, -0.1f, 17, {2, 3}), DomainError);
}

TEST_CASE("SDE keeps the ODE terminal marginal on the analytic Gaussian") {
  GaussianVelocity v(1.5f, 0.5f);
  Tensor ode = sample_ode(v, {}, 400, 21, {10000, 1});
  Tensor sde = sample_sde(v, {}, 400, 0.5f, 22, {10000, 1}).states.back();
  auto mo = testing::moments(ode.data()), ms = testing::moments(sde.data());
  CHECK(std::fabs(mo.mean - ms.mean) < 3 * std::hypot(mo.mean_se, ms.mean_se));
  CHECK(std::fabs(mo.var - ms.var) < 3 * std::hypot(mo.var_se, ms.var_se));
}

TEST_CASE("gaussian velocity is the conditional expectation") {
  // Monte-Carlo regression of eps - x0 on x_t near a fixed point.
  const float mu = 1.5f, s = 0.5f;
  GaussianVelocity v(mu, s);
  Rng rng(8);
  const float t = 0.4f, x_at = 0.9f;
  double acc = 0;
  int n = 0;
  for (int i = 0; i < 2000000; ++i) {
    const float x0 = mu + s * rng.normal(), eps = rng.normal();
    const float xt = (1 - t) * x0 + t * eps;
    if (std::fabs(xt - x_at) < 0.01f) {
      acc += eps - x0;
      ++n;
    }
  }
  REQUIRE(n > 1000);
  CHECK(velocity_at(v, Tensor::from_data({1, 1}, {x_at}), t, {}).item() ==
        doctest::Approx(acc / n).epsilon(0.05));
  CHECK(v.bayes_mse(0.0) == doctest::Approx(1.0));
  CHECK(v.bayes_mse(1.0) == doctest::Approx(0.25));
}

TEST_CASE("transition_logprob examples") {
  const std::size_t d = 6;
  Tensor mean = Tensor::from_data({2, 3}, {0.1f, -0.2f, 0.3f, 1.0f, 2.0f, -1.0f});
  Transition unit{0.5f, 0.25f, mean, 1.0f};
  const double peak = transition_logprob(unit, mean);
  CHECK(peak == doctest::Approx(-double(d) * std::log(2 * std::numbers::pi) / 2));
  Transition wide{0.5f, 0.25f, mean, 2.0f};
  CHECK(peak - transition_logprob(wide, mean) == doctest::Approx(d * std::log(2.0)));

  Rng rng(4);
  Tensor cand = Tensor::randn({2, 3}, rng);
  Transition st{0.5f, 0.25f, mean, 0.37f};
  double direct = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const double z = (double(cand[i]) - mean[i]) / double(0.37f);
    direct += std::log(std::exp(-0.5 * z * z) / (double(0.37f) * std::sqrt(2 * std::numbers::pi)));
  }
  CHECK(transition_logprob(st, cand) == doctest::Approx(direct).epsilon(1e-12));
  CHECK(transition_logprob(mean, 0.37f, cand).item() == doctest::Approx(direct).epsilon(1e-5));

  Transition flat{0.5f, 0.25f, mean, 0.0f};
  CHECK_THROWS_AS(transition_logprob(flat, cand), DegenerateDensityError);
  CHECK_THROWS_AS(transition_logprob(mean, 0.0f, cand), DegenerateDensityError);

  Tensor m = Tensor::randn({2, 3}, rng);
  auto r = gradcheck([&]() { return transition_logprob(m, 0.8f, cand); }, {m});
  CHECK(r.rel_error < 1e-3);
}
