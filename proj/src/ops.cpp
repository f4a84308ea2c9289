#include "parauni/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "parauni/errors.hpp"
#include "parauni/kernels/kernels.hpp"

namespace parauni::ops {

using detail::Node;
using kernels::GemmKind;

namespace {

const kernels::KernelTable& K() { return kernels::active(); }

bool wants(const Node& self, std::size_t i) { return self.parents[i]->requires_grad; }
float* grad_of(Node& self, std::size_t i) { return self.parents[i]->grad_buffer(); }
const float* data_of(const Node& self, std::size_t i) { return self.parents[i]->data.data(); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes differ: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size())
    throw AxisError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                    shape_str(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<float> out(x.numel());
  const float* in = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return detail::make_result(x.shape(), std::move(out), {x}, [deriv](Node& self) {
    const float* xin = data_of(self, 0);
    float* dx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      dx[i] += self.grad[i] * deriv(xin[i], self.data[i]);
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<float> out(m * n);
  K().gemm(GemmKind::NN, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return detail::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    const float* g = self.grad.data();
    if (wants(self, 0)) K().gemm(GemmKind::NT, m, k, n, g, data_of(self, 1), grad_of(self, 0), true);
    if (wants(self, 1)) K().gemm(GemmKind::TN, k, n, m, data_of(self, 0), g, grad_of(self, 1), true);
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<float> out(r * c);
  const float* in = x.data().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return detail::make_result({c, r}, std::move(out), {x}, [r, c](Node& self) {
    float* dx = grad_of(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += self.grad[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<float> out(a.numel());
  K().add(a.data().data(), b.data().data(), out.data(), out.size());
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const std::size_t n = self.grad.size();
    if (wants(self, 0)) K().axpy(n, 1.0f, self.grad.data(), grad_of(self, 0));
    if (wants(self, 1)) K().axpy(n, 1.0f, self.grad.data(), grad_of(self, 1));
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<float> out(a.numel());
  const float* x = a.data().data();
  const float* y = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const std::size_t n = self.grad.size();
    if (wants(self, 0)) K().axpy(n, 1.0f, self.grad.data(), grad_of(self, 0));
    if (wants(self, 1)) K().axpy(n, -1.0f, self.grad.data(), grad_of(self, 1));
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<float> out(a.numel());
  K().mul(a.data().data(), b.data().data(), out.data(), out.size());
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const std::size_t n = self.grad.size();
    const float* g = self.grad.data();
    for (std::size_t side = 0; side < 2; ++side) {
      if (!wants(self, side)) continue;
      const float* other = data_of(self, 1 - side);
      float* d = grad_of(self, side);
      for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * other[i];
    }
  });
}

Tensor add_row(const Tensor& x, const Tensor& bias) {
  if (x.rank() == 0) throw ShapeError("add_row: scalar input");
  const std::size_t n = x.shape().back();
  const bool bias_ok = bias.numel() == n && (bias.rank() == 1 || (bias.rank() == 2 && bias.dim(0) == 1));
  if (!bias_ok)
    throw ShapeError("add_row: bias " + shape_str(bias.shape()) + " does not match rows of " +
                     shape_str(x.shape()));
  const std::size_t rows = x.numel() / n;
  std::vector<float> out(x.numel());
  const float* b = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) K().add(x.data().data() + r * n, b, out.data() + r * n, n);
  return detail::make_result(x.shape(), std::move(out), {x, bias}, [rows, n](Node& self) {
    const float* g = self.grad.data();
    if (wants(self, 0)) K().axpy(rows * n, 1.0f, g, grad_of(self, 0));
    if (wants(self, 1)) {
      float* db = grad_of(self, 1);
      for (std::size_t r = 0; r < rows; ++r) K().axpy(n, 1.0f, g + r * n, db);
    }
  });
}

Tensor scale(const Tensor& x, float factor) {
  std::vector<float> out(x.numel());
  K().scale(x.data().data(), factor, out.data(), out.size());
  return detail::make_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
    K().axpy(self.grad.size(), factor, self.grad.data(), grad_of(self, 0));
  });
}

Tensor add_scalar(const Tensor& x, float value) {
  return unary(
      x, [value](float v) { return v + value; }, [](float, float) { return 1.0f; });
}

Tensor square(const Tensor& x) {
  return unary(
      x, [](float v) { return v * v; }, [](float v, float) { return 2.0f * v; });
}

Tensor exp(const Tensor& x) {
  return unary(
      x, [](float v) { return std::exp(v); }, [](float, float y) { return y; });
}

Tensor gelu(const Tensor& x) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      x,
      [](float v) {
        double d = v;
        return static_cast<float>(0.5 * d * (1.0 + std::erf(d * kInvSqrt2)));
      },
      [](float v, float) {
        double d = v;
        double cdf = 0.5 * (1.0 + std::erf(d * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * d * d);
        return static_cast<float>(cdf + d * pdf);
      });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "minimum");
  std::vector<float> out(a.numel());
  const float* x = a.data().data();
  const float* y = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(x[i], y[i]);
  return detail::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    const float* x = data_of(self, 0);
    const float* y = data_of(self, 1);
    float* dx = wants(self, 0) ? grad_of(self, 0) : nullptr;
    float* dy = wants(self, 1) ? grad_of(self, 1) : nullptr;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      // Ties route to the first argument.
      if (x[i] <= y[i]) {
        if (dx) dx[i] += self.grad[i];
      } else if (dy) {
        dy[i] += self.grad[i];
      }
    }
  });
}

Tensor clamp(const Tensor& x, float lo, float hi) {
  if (!(lo <= hi)) throw DomainError("clamp: lo must not exceed hi");
  return unary(
      x, [lo, hi](float v) { return std::clamp(v, lo, hi); },
      [lo, hi](float v, float) { return (v >= lo && v <= hi) ? 1.0f : 0.0f; });
}

Tensor sum(const Tensor& x) {
  float total = K().sum(x.data().data(), x.numel());
  return detail::make_result({}, {total}, {x}, [](Node& self) {
    float g = self.grad[0];
    float* dx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) dx[i] += g;
  });
}

Tensor mean(const Tensor& x) {
  const float inv = 1.0f / static_cast<float>(x.numel());
  float total = K().sum(x.data().data(), x.numel()) * inv;
  return detail::make_result({}, {total}, {x}, [inv](Node& self) {
    float g = self.grad[0] * inv;
    float* dx = grad_of(self, 0);
    for (std::size_t i = 0; i < self.parents[0]->data.size(); ++i) dx[i] += g;
  });
}

Tensor mean(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "mean");
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const float inv = 1.0f / static_cast<float>(s.n);
  std::vector<float> out(s.outer * s.inner, 0.0f);
  const float* in = x.data().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.n; ++j)
      K().axpy(s.inner, 1.0f, in + (o * s.n + j) * s.inner, out.data() + o * s.inner);
  for (float& v : out) v *= inv;
  return detail::make_result(std::move(out_shape), std::move(out), {x}, [s, inv](Node& self) {
    float* dx = grad_of(self, 0);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t j = 0; j < s.n; ++j)
        K().axpy(s.inner, inv, self.grad.data() + o * s.inner, dx + (o * s.n + j) * s.inner);
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  std::vector<float> out(x.numel());
  const float* in = x.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.n * s.inner + i;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::size_t j = 0; j < s.n; ++j) mx = std::max(mx, in[base + j * s.inner]);
      float total = 0.0f;
      for (std::size_t j = 0; j < s.n; ++j) {
        float e = std::exp(in[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.n; ++j) out[base + j * s.inner] /= total;
    }
  }
  return detail::make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    const float* y = self.data.data();
    const float* g = self.grad.data();
    float* dx = grad_of(self, 0);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.n * s.inner + i;
        float dot = 0.0f;
        for (std::size_t j = 0; j < s.n; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.n; ++j) {
          const std::size_t idx = base + j * s.inner;
          dx[idx] += y[idx] * (g[idx] - dot);
        }
      }
    }
  });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
  if (x.rank() == 0) throw EmptyError("layernorm: input has no axis to normalize");
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d)
    throw ShapeError("layernorm: gain " + shape_str(gain.shape()) + " / bias " +
                     shape_str(bias.shape()) + " do not match input " + shape_str(x.shape()));
  if (!(eps > 0.0f)) throw DomainError("layernorm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<float> out(x.numel());
  std::vector<float> xhat(x.numel());
  std::vector<float> inv_std(rows);
  const float* in = x.data().data();
  const float* gn = gain.data().data();
  const float* bs = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = in + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = static_cast<float>(is);
    for (std::size_t j = 0; j < d; ++j) {
      float h = static_cast<float>((row[j] - mu) * is);
      xhat[r * d + j] = h;
      out[r * d + j] = gn[j] * h + bs[j];
    }
  }
  return detail::make_result(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const float* g = self.grad.data();
        const float* gn = data_of(self, 1);
        if (wants(self, 0)) {
          float* dx = grad_of(self, 0);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0, mean_dh_h = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              double dh = static_cast<double>(g[r * d + j]) * gn[j];
              mean_dh += dh;
              mean_dh_h += dh * xhat[r * d + j];
            }
            mean_dh /= static_cast<double>(d);
            mean_dh_h /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) {
              double dh = static_cast<double>(g[r * d + j]) * gn[j];
              dx[r * d + j] +=
                  static_cast<float>(inv_std[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h));
            }
          }
        }
        if (wants(self, 1)) {
          float* dg = grad_of(self, 1);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) dg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (wants(self, 2)) {
          float* db = grad_of(self, 2);
          for (std::size_t r = 0; r < rows; ++r) K().axpy(d, 1.0f, g + r * d, db);
        }
      });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  std::vector<float> out(x.data().begin(), x.data().end());
  return detail::make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    K().axpy(self.grad.size(), 1.0f, self.grad.data(), grad_of(self, 0));
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw EmptyError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const AxisSplit s0 = split_axis(first, axis, "concat");
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    Shape a = p.shape(), b = first;
    if (a.size() != b.size())
      throw ShapeError("concat: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    a[axis] = b[axis] = 0;
    if (a != b)
      throw ShapeError("concat: shapes " + shape_str(p.shape()) + " and " + shape_str(first) +
                       " differ off the concat axis");
    widths.push_back(p.shape()[axis] * s0.inner);
    total += p.shape()[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  const std::size_t row = total * s0.inner;
  std::vector<float> out(s0.outer * row);
  std::size_t offset = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const float* in = parts[i].data().data();
    for (std::size_t o = 0; o < s0.outer; ++o)
      std::copy_n(in + o * widths[i], widths[i], out.data() + o * row + offset);
    offset += widths[i];
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return detail::make_result(std::move(out_shape), std::move(out), inputs,
                             [outer = s0.outer, row, widths](Node& self) {
                               std::size_t off = 0;
                               for (std::size_t i = 0; i < widths.size(); ++i) {
                                 if (wants(self, i)) {
                                   float* d = grad_of(self, i);
                                   for (std::size_t o = 0; o < outer; ++o)
                                     K().axpy(widths[i], 1.0f, self.grad.data() + o * row + off,
                                              d + o * widths[i]);
                                 }
                                 off += widths[i];
                               }
                             });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit s = split_axis(x.shape(), axis, "slice");
  if (begin >= end || end > s.n)
    throw IndexError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for axis of size " + std::to_string(s.n));
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t width = (end - begin) * s.inner;
  const std::size_t row = s.n * s.inner;
  const std::size_t off = begin * s.inner;
  std::vector<float> out(s.outer * width);
  const float* in = x.data().data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(in + o * row + off, width, out.data() + o * width);
  return detail::make_result(std::move(out_shape), std::move(out), {x},
                             [outer = s.outer, width, row, off](Node& self) {
                               float* dx = grad_of(self, 0);
                               for (std::size_t o = 0; o < outer; ++o)
                                 K().axpy(width, 1.0f, self.grad.data() + o * width,
                                          dx + o * row + off);
                             });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be rank 2, got " + shape_str(table.shape()));
  if (ids.empty()) throw EmptyError("embedding: no ids");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  std::vector<int> idx(ids.begin(), ids.end());
  for (int id : idx)
    if (id < 0 || static_cast<std::size_t>(id) >= vocab)
      throw VocabularyError("token " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(vocab));
  std::vector<float> out(idx.size() * d);
  const float* in = table.data().data();
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(in + static_cast<std::size_t>(idx[r]) * d, d, out.data() + r * d);
  return detail::make_result({idx.size(), d}, std::move(out), {table}, [idx, d](Node& self) {
    float* dt = grad_of(self, 0);
    for (std::size_t r = 0; r < idx.size(); ++r)
      K().axpy(d, 1.0f, self.grad.data() + r * d, dt + static_cast<std::size_t>(idx[r]) * d);
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(1) != k.dim(1) ||
      k.dim(0) != v.dim(0))
    throw ShapeError("attention: incompatible q " + shape_str(q.shape()) + ", k " +
                     shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  const std::size_t nq = q.dim(0), nk = k.dim(0), d = q.dim(1), dv = v.dim(1);
  if (causal && nk < nq)
    throw ShapeError("attention: causal mask needs at least as many keys as queries");
  const float sc = 1.0f / std::sqrt(static_cast<float>(d));
  const std::size_t shift = nk - std::min(nk, nq);

  std::vector<float> probs(nq * nk);
  K().gemm(GemmKind::NT, nq, nk, d, q.data().data(), k.data().data(), probs.data(), false);
  for (std::size_t i = 0; i < nq; ++i) {
    float* row = probs.data() + i * nk;
    const std::size_t visible = causal ? i + shift + 1 : nk;
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < visible; ++j) mx = std::max(mx, row[j] * sc);
    float total = 0.0f;
    for (std::size_t j = 0; j < visible; ++j) {
      row[j] = std::exp(row[j] * sc - mx);
      total += row[j];
    }
    for (std::size_t j = 0; j < visible; ++j) row[j] /= total;
    for (std::size_t j = visible; j < nk; ++j) row[j] = 0.0f;
  }
  std::vector<float> out(nq * dv);
  K().gemm(GemmKind::NN, nq, dv, nk, probs.data(), v.data().data(), out.data(), false);

  return detail::make_result(
      {nq, dv}, std::move(out), {q, k, v},
      [nq, nk, d, dv, sc, probs = std::move(probs)](Node& self) {
        const float* g = self.grad.data();
        if (wants(self, 2)) K().gemm(GemmKind::TN, nk, dv, nq, probs.data(), g, grad_of(self, 2), true);
        if (!wants(self, 0) && !wants(self, 1)) return;
        std::vector<float> ds(nq * nk);
        K().gemm(GemmKind::NT, nq, nk, dv, g, data_of(self, 2), ds.data(), false);
        for (std::size_t i = 0; i < nq; ++i) {
          const float* p = probs.data() + i * nk;
          float* row = ds.data() + i * nk;
          float dot = K().dot(row, p, nk);
          for (std::size_t j = 0; j < nk; ++j) row[j] = sc * p[j] * (row[j] - dot);
        }
        if (wants(self, 0)) K().gemm(GemmKind::NN, nq, d, nk, ds.data(), data_of(self, 1), grad_of(self, 0), true);
        if (wants(self, 1)) K().gemm(GemmKind::TN, nk, d, nq, ds.data(), data_of(self, 0), grad_of(self, 1), true);
      });
}

}  // namespace parauni::ops
