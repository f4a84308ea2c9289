#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "parauni/rng.hpp"
#include "parauni/tensor.hpp"

// Parameterized building blocks shared by the VLM, the LIM and the denoiser.
namespace parauni::nn {

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

std::size_t count_params(const ParamList& params);
void set_trainable(const ParamList& params, bool trainable);
void clear_grads(const ParamList& params);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng, bool trainable);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  static LayerNorm init(std::size_t dim, bool trainable);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

// Heads split the projected width evenly; context may have its own width.
struct MultiHeadAttention {
  Linear query, key, value, out;
  std::size_t heads = 1;

  static MultiHeadAttention init(std::size_t width, std::size_t context_width, std::size_t heads,
                                 Rng& rng, bool trainable);
  Tensor operator()(const Tensor& x, const Tensor& context, bool causal) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct Mlp {
  Linear up, down;

  static Mlp init(std::size_t width, std::size_t hidden, Rng& rng, bool trainable);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

inline constexpr std::size_t kMlpRatio = 4;

// Pre-norm self-attention block: x + attn(ln(x)), then + mlp(ln(x)).
struct TransformerBlock {
  LayerNorm ln_attn;
  MultiHeadAttention attn;
  LayerNorm ln_mlp;
  Mlp mlp;

  static TransformerBlock init(std::size_t width, std::size_t heads, Rng& rng, bool trainable);
  Tensor operator()(const Tensor& x, bool causal) const;
  void collect(ParamList& out, const std::string& prefix) const;
  // 12·D² + 13·D for width D.
  static std::size_t param_count(std::size_t width);
};

}  // namespace parauni::nn
