#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "parauni/errors.hpp"
#include "parauni/kernels/kernels.hpp"
#include "parauni/nn.hpp"
#include "parauni/ops.hpp"
#include "support/gradcheck.hpp"

using namespace parauni;
using parauni::testing::gradcheck;

namespace {

Tensor rnd(Shape shape, Rng& rng, float stddev = 1.0f) { return Tensor::randn(std::move(shape), rng, stddev); }

std::vector<float> vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

// Restores the process-wide kernel table when a test swaps it.
struct KernelScope {
  const kernels::KernelTable& saved = kernels::active();
  ~KernelScope() { kernels::set_active(saved); }
};

}  // namespace

TEST_CASE("matmul examples") {
  Rng rng(1);
  Tensor x = rnd({3, 4}, rng);
  Tensor eye = Tensor::from_data({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  CHECK(vec(ops::matmul(eye, x)) == vec(x));

  Tensor zero = Tensor::zeros({4, 2});
  Tensor annihilated = ops::matmul(x, zero);
  for (float v : annihilated.data()) CHECK(v == 0.0f);

  Tensor a = rnd({4, 5}, rng), b = rnd({5, 3}, rng);
  Tensor c = ops::matmul(a, b);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double acc = 0;
      for (std::size_t p = 0; p < 5; ++p) acc += double(a[i * 5 + p]) * b[p * 3 + j];
      CHECK(c[i * 3 + j] == doctest::Approx(acc).epsilon(1e-5));
    }

  try {
    ops::matmul(a, a);
    FAIL("expected shape error");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("layernorm examples") {
  Tensor one = Tensor::full({4}, 1.0f), zero = Tensor::zeros({4});
  Tensor flat = ops::layernorm(Tensor::full({2, 4}, 3.5f), one, zero);
  for (float v : flat.data()) CHECK(v == 0.0f);

  Tensor pm = Tensor::from_data({1, 2}, {1.0f, -1.0f});
  Tensor y = ops::layernorm(pm, Tensor::full({2}, 1.0f), Tensor::zeros({2}), 1e-12f);
  CHECK(y[0] == doctest::Approx(1.0f).epsilon(1e-6));
  CHECK(y[1] == doctest::Approx(-1.0f).epsilon(1e-6));

  Rng rng(2);
  Tensor x = rnd({3, 7}, rng), gain = rnd({7}, rng), bias = rnd({7}, rng);
  Tensor out = ops::layernorm(x, gain, bias);
  for (std::size_t r = 0; r < 3; ++r) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 7; ++j) mu += x[r * 7 + j];
    mu /= 7;
    for (std::size_t j = 0; j < 7; ++j) var += (x[r * 7 + j] - mu) * (x[r * 7 + j] - mu);
    var /= 7;
    for (std::size_t j = 0; j < 7; ++j) {
      double ref = (x[r * 7 + j] - mu) / std::sqrt(var + 1e-5) * gain[j] + bias[j];
      CHECK(std::abs(out[r * 7 + j] - ref) < 1e-6 * (1 + std::abs(ref)));
    }
  }

  CHECK_THROWS_AS(ops::layernorm(Tensor::scalar(1.0f), Tensor::scalar(1.0f), Tensor::scalar(0.0f)),
                  EmptyError);
  CHECK_THROWS_AS(ops::layernorm(x, Tensor::full({6}, 1.0f), Tensor::zeros({6})), ShapeError);
}

TEST_CASE("softmax, mean and axis errors") {
  Tensor s = ops::softmax(Tensor::full({5}, 0.3f), 0);
  for (float v : s.data()) CHECK(v == doctest::Approx(0.2f));
  CHECK(ops::mean(Tensor::from_data({2}, {2.0f, 4.0f})).item() == 3.0f);

  Rng rng(3);
  Tensor x = rnd({3, 4}, rng);
  Tensor cols = ops::softmax(x, 0);
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(cols[j] + cols[4 + j] + cols[8 + j] == doctest::Approx(1.0f));
  CHECK_THROWS_AS(ops::softmax(x, 2), AxisError);
  CHECK_THROWS_AS(ops::mean(x, 5), AxisError);
  CHECK_THROWS_AS(ops::concat(std::vector<Tensor>{x, x}, 3), AxisError);
}

TEST_CASE("attention examples") {
  Rng rng(4);
  Tensor q = rnd({3, 4}, rng);
  Tensor k1 = rnd({1, 4}, rng), v1 = rnd({1, 4}, rng);
  Tensor single = ops::attention(q, k1, v1);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) CHECK(single[i * 4 + j] == doctest::Approx(v1[j]));

  Tensor krow = rnd({1, 4}, rng);
  Tensor keys = ops::concat(std::vector<Tensor>{krow, krow, krow}, 0);
  Tensor vals = rnd({3, 4}, rng);
  Tensor avg = ops::attention(q, keys, vals);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      CHECK(avg[i * 4 + j] == doctest::Approx((vals[j] + vals[4 + j] + vals[8 + j]) / 3.0f));

  Tensor k = rnd({3, 4}, rng), v = rnd({3, 4}, rng);
  Tensor fused = ops::attention(q, k, v);
  Tensor composed =
      ops::matmul(ops::softmax(ops::scale(ops::matmul(q, ops::transpose(k)), 0.5f), 1), v);
  for (std::size_t i = 0; i < 12; ++i) CHECK(fused[i] == doctest::Approx(composed[i]).epsilon(1e-5));

  CHECK_THROWS_AS(ops::attention(q, rnd({3, 5}, rng), v), ShapeError);
}

TEST_CASE("causal attention hides later keys") {
  Rng rng(5);
  Tensor q = rnd({4, 2}, rng), k = rnd({4, 2}, rng), v = rnd({4, 2}, rng);
  Tensor out = ops::attention(q, k, v, true);
  // First query sees only the first key.
  CHECK(out[0] == doctest::Approx(v[0]));
  CHECK(out[1] == doctest::Approx(v[1]));
  // Changing the last key/value leaves earlier rows untouched.
  auto vd = v.detach();
  vd.mutable_data()[6] += 10.0f;
  Tensor out2 = ops::attention(q, k, vd, true);
  for (std::size_t i = 0; i < 6; ++i) CHECK(out2[i] == out[i]);
}

TEST_CASE("backward examples") {
  Rng rng(6);
  Tensor x = rnd({2, 3}, rng);
  x.set_requires_grad(true);
  ops::sum(x).backward();
  for (float g : x.grad()) CHECK(g == 1.0f);

  x.clear_grad();
  ops::sum(ops::mul(x, x)).backward();
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == doctest::Approx(2.0f * x[i]));

  CHECK_THROWS_AS(ops::mul(x, x).backward(), ShapeError);
}

TEST_CASE("two-layer MLP gradients match finite differences") {
  Rng rng(7);
  Tensor x = rnd({5, 4}, rng);
  Tensor w1 = rnd({4, 6}, rng, 0.5f), b1 = rnd({6}, rng, 0.1f);
  Tensor w2 = rnd({6, 3}, rng, 0.5f), b2 = rnd({3}, rng, 0.1f);
  auto fwd = [&] {
    return ops::add_row(ops::matmul(ops::gelu(ops::add_row(ops::matmul(x, w1), b1)), w2), b2);
  };
  auto r = gradcheck(fwd, {w1, b1, w2, b2, x});
  CHECK(r.rel_error < 1e-3);
  CHECK(r.analytic_norm > 0.0);
}

TEST_CASE("every differentiable op matches finite differences on 10 seeds") {
  auto check = [](const char* name, std::function<Tensor()> fwd, std::vector<Tensor> leaves) {
    auto r = gradcheck(fwd, std::move(leaves));
    INFO(name << " rel_error=" << r.rel_error);
    CHECK(r.rel_error < 1e-3);
  };
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(100 + seed);
    Tensor a = rnd({3, 4}, rng), b = rnd({3, 4}, rng), c = rnd({4, 5}, rng);
    Tensor row = rnd({4}, rng), gain = rnd({4}, rng), bias = rnd({4}, rng);
    Tensor k = rnd({5, 4}, rng), v = rnd({5, 3}, rng);
    Tensor table = rnd({6, 4}, rng);
    check("matmul", [&] { return ops::matmul(a, c); }, {a, c});
    check("transpose", [&] { return ops::transpose(a); }, {a});
    check("add", [&] { return ops::add(a, b); }, {a, b});
    check("sub", [&] { return ops::sub(a, b); }, {a, b});
    check("mul", [&] { return ops::mul(a, b); }, {a, b});
    check("add_row", [&] { return ops::add_row(a, row); }, {a, row});
    check("scale", [&] { return ops::scale(a, -1.3f); }, {a});
    check("add_scalar", [&] { return ops::add_scalar(a, 0.7f); }, {a});
    check("square", [&] { return ops::square(a); }, {a});
    check("exp", [&] { return ops::exp(ops::scale(a, 0.5f)); }, {a});
    check("gelu", [&] { return ops::gelu(a); }, {a});
    check("minimum", [&] { return ops::minimum(a, b); }, {a, b});
    check("clamp", [&] { return ops::clamp(a, -0.5f, 0.5f); }, {a});
    check("sum", [&] { return ops::sum(a); }, {a});
    check("mean", [&] { return ops::mean(a); }, {a});
    check("mean_axis0", [&] { return ops::mean(a, 0); }, {a});
    check("mean_axis1", [&] { return ops::mean(a, 1); }, {a});
    check("softmax1", [&] { return ops::softmax(a, 1); }, {a});
    check("softmax0", [&] { return ops::softmax(a, 0); }, {a});
    check("layernorm", [&] { return ops::layernorm(a, gain, bias); }, {a, gain, bias});
    check("reshape", [&] { return ops::reshape(a, {2, 6}); }, {a});
    check("concat0", [&] { return ops::concat(std::vector<Tensor>{a, b}, 0); }, {a, b});
    check("concat1", [&] { return ops::concat(std::vector<Tensor>{a, b}, 1); }, {a, b});
    check("slice", [&] { return ops::slice(c, 1, 1, 4); }, {c});
    const std::vector<int> ids{2, 0, 2, 5};
    check("embedding", [&] { return ops::embedding(table, ids); }, {table});
    check("attention", [&] { return ops::attention(a, k, v); }, {a, k, v});
    check("attention_causal", [&] { return ops::attention(a, k, v, true); }, {a, k, v});
  }
}

TEST_CASE("clamp and minimum route gradients") {
  Tensor x = Tensor::from_data({3}, {-2.0f, 0.0f, 2.0f}, true);
  ops::sum(ops::clamp(x, -1.0f, 1.0f)).backward();
  CHECK(vec(Tensor::from_data({3}, {x.grad()[0], x.grad()[1], x.grad()[2]})) ==
        std::vector<float>{0.0f, 1.0f, 0.0f});
  Tensor inf = ops::clamp(x, -INFINITY, INFINITY);
  CHECK(vec(inf) == vec(x));
}

TEST_CASE("backward leaves forward values unchanged and ops are deterministic") {
  Rng rng(8);
  Tensor x = rnd({4, 4}, rng);
  x.set_requires_grad(true);
  Tensor g = rnd({4}, rng), b = rnd({4}, rng);
  auto build = [&] { return ops::softmax(ops::layernorm(ops::matmul(x, x), g, b), 1); };
  Tensor y1 = build();
  auto before = vec(y1);
  ops::sum(ops::square(y1)).backward();
  CHECK(vec(y1) == before);
  CHECK(vec(build()) == before);
}

TEST_CASE("no-grad mode records no tape") {
  Tensor x = Tensor::full({2}, 1.0f, true);
  NoGradGuard guard;
  Tensor y = ops::scale(x, 2.0f);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->parents.empty());
}

TEST_CASE("transformer block output agrees across kernel variants") {
  const kernels::KernelTable* simd = kernels::avx2_table();
  if (!simd || !kernels::cpu_has_avx2()) return;
  KernelScope scope;
  Rng rng(9);
  auto block = nn::TransformerBlock::init(16, 4, rng, true);
  Tensor x = rnd({6, 16}, rng);
  nn::ParamList params;
  block.collect(params, "b");

  auto run = [&](const kernels::KernelTable& table) {
    kernels::set_active(table);
    nn::clear_grads(params);
    Tensor y = block(x, true);
    ops::sum(ops::square(y)).backward();
    std::vector<float> out = vec(y);
    for (const auto& p : params) out.insert(out.end(), p.tensor.grad().begin(), p.tensor.grad().end());
    return out;
  };
  auto ref = run(kernels::scalar_table());
  auto fast = run(*simd);
  REQUIRE(ref.size() == fast.size());
  for (std::size_t i = 0; i < ref.size(); ++i)
    CHECK(std::abs(ref[i] - fast[i]) <= 1e-4f * (1.0f + std::abs(ref[i])));
}

TEST_CASE("tensor construction errors") {
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor::from_data({0}, {}), ShapeError);
  CHECK_THROWS_AS(ops::embedding(Tensor::zeros({3, 2}), std::vector<int>{3}), VocabularyError);
  CHECK_THROWS_AS(ops::slice(Tensor::zeros({3, 2}), 0, 2, 4), IndexError);
}
