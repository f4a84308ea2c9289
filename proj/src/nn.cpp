#include "parauni/nn.hpp"

#include <cmath>

#include "parauni/errors.hpp"
#include "parauni/ops.hpp"

namespace parauni::nn {

std::size_t count_params(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void set_trainable(const ParamList& params, bool trainable) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.set_requires_grad(trainable);
    if (!trainable) t.clear_grad();
  }
}

void clear_grads(const ParamList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.clear_grad();
  }
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng, bool trainable) {
  const float stddev = 1.0f / std::sqrt(static_cast<float>(in));
  return {Tensor::randn({in, out}, rng, stddev, trainable), Tensor::zeros({out}, trainable)};
}

Tensor Linear::operator()(const Tensor& x) const { return ops::add_row(ops::matmul(x, weight), bias); }

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm LayerNorm::init(std::size_t dim, bool trainable) {
  return {Tensor::full({dim}, 1.0f, trainable), Tensor::zeros({dim}, trainable)};
}

Tensor LayerNorm::operator()(const Tensor& x) const { return ops::layernorm(x, gain, bias); }

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

MultiHeadAttention MultiHeadAttention::init(std::size_t width, std::size_t context_width,
                                            std::size_t heads, Rng& rng, bool trainable) {
  if (heads == 0 || width % heads != 0)
    throw ConfigError("attention width " + std::to_string(width) + " not divisible by " +
                      std::to_string(heads) + " heads");
  MultiHeadAttention m;
  m.query = Linear::init(width, width, rng, trainable);
  m.key = Linear::init(context_width, width, rng, trainable);
  m.value = Linear::init(context_width, width, rng, trainable);
  m.out = Linear::init(width, width, rng, trainable);
  m.heads = heads;
  return m;
}

Tensor MultiHeadAttention::operator()(const Tensor& x, const Tensor& context, bool causal) const {
  Tensor q = query(x), k = key(context), v = value(context);
  if (heads == 1) return out(ops::attention(q, k, v, causal));
  const std::size_t head_dim = q.dim(1) / heads;
  std::vector<Tensor> parts;
  parts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * head_dim, e = b + head_dim;
    parts.push_back(ops::attention(ops::slice(q, 1, b, e), ops::slice(k, 1, b, e),
                                   ops::slice(v, 1, b, e), causal));
  }
  return out(ops::concat(parts, 1));
}

void MultiHeadAttention::collect(ParamList& out_params, const std::string& prefix) const {
  query.collect(out_params, prefix + ".query");
  key.collect(out_params, prefix + ".key");
  value.collect(out_params, prefix + ".value");
  out.collect(out_params, prefix + ".out");
}

Mlp Mlp::init(std::size_t width, std::size_t hidden, Rng& rng, bool trainable) {
  return {Linear::init(width, hidden, rng, trainable), Linear::init(hidden, width, rng, trainable)};
}

Tensor Mlp::operator()(const Tensor& x) const { return down(ops::gelu(up(x))); }

void Mlp::collect(ParamList& out, const std::string& prefix) const {
  up.collect(out, prefix + ".up");
  down.collect(out, prefix + ".down");
}

TransformerBlock TransformerBlock::init(std::size_t width, std::size_t heads, Rng& rng,
                                        bool trainable) {
  TransformerBlock b;
  b.ln_attn = LayerNorm::init(width, trainable);
  b.attn = MultiHeadAttention::init(width, width, heads, rng, trainable);
  b.ln_mlp = LayerNorm::init(width, trainable);
  b.mlp = Mlp::init(width, kMlpRatio * width, rng, trainable);
  return b;
}

Tensor TransformerBlock::operator()(const Tensor& x, bool causal) const {
  Tensor normed = ln_attn(x);
  Tensor h = ops::add(x, attn(normed, normed, causal));
  return ops::add(h, mlp(ln_mlp(h)));
}

void TransformerBlock::collect(ParamList& out, const std::string& prefix) const {
  ln_attn.collect(out, prefix + ".ln_attn");
  attn.collect(out, prefix + ".attn");
  ln_mlp.collect(out, prefix + ".ln_mlp");
  mlp.collect(out, prefix + ".mlp");
}

std::size_t TransformerBlock::param_count(std::size_t width) {
  const std::size_t d = width, h = kMlpRatio * width;
  return 2 * d                  // ln_attn
         + 4 * (d * d + d)      // q, k, v, out
         + 2 * d                // ln_mlp
         + (d * h + h) + (h * d + d);
}

}  // namespace parauni::nn
