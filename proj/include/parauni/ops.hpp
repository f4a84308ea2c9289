#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "parauni/tensor.hpp"

// Differentiable tensor operations. Shapes never broadcast implicitly; the
// only broadcast is add_row's trailing-axis bias.
namespace parauni::ops {

inline constexpr float kLayerNormEps = 1e-5f;

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// x[..., n] + bias[n] (bias may also be [1, n]).
Tensor add_row(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& x, float factor);
Tensor add_scalar(const Tensor& x, float value);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor minimum(const Tensor& a, const Tensor& b);
// Gradient passes where lo <= x <= hi.
Tensor clamp(const Tensor& x, float lo, float hi);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over one axis; the axis is removed from the shape.
Tensor mean(const Tensor& x, std::size_t axis);

Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes over the last axis.
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 float eps = kLayerNormEps);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
// Row gather from table[V, D]; ids must be < V.
Tensor embedding(const Tensor& table, std::span<const int> ids);

// softmax(q kᵀ / √D) v with q[Nq, D], k[Nk, D], v[Nk, Dv]. With causal set,
// query i sees keys j <= i + (Nk - Nq).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal = false);

}  // namespace parauni::ops
