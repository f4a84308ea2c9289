#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "parauni/nn.hpp"
#include "parauni/tensor.hpp"

namespace parauni {

struct VlmConfig {
  std::size_t layers = 28;
  std::size_t width = 32;
  std::size_t queries = 256;
  std::size_t vocab = 64;
  std::size_t heads = 4;
  std::size_t max_prompt_len = 8;

  // Throws ConfigError.
  void validate() const;
};

// Query slice of the hidden state after every block; per_layer[i - 1] is the
// state after block i.
struct LayerFeatures {
  std::vector<Tensor> per_layer;

  std::size_t size() const { return per_layer.size(); }
  // 1-based layer index.
  const Tensor& layer(std::size_t index) const;
};

// Frozen causal transformer that reads prompt tokens followed by learnable
// queries. Prompt positions get learned positional embeddings; every query
// shares one positional embedding.
class MiniVlm {
 public:
  static MiniVlm init(const VlmConfig& config, std::uint64_t seed);

  LayerFeatures forward_collect(std::span<const int> prompt, const Tensor& queries) const;
  LayerFeatures forward_collect(std::span<const int> prompt) const {
    return forward_collect(prompt, queries_);
  }

  const VlmConfig& config() const { return config_; }
  const Tensor& queries() const { return queries_; }
  std::vector<nn::TransformerBlock>& blocks() { return blocks_; }
  const std::vector<nn::TransformerBlock>& blocks() const { return blocks_; }

  // "vlm.*": embeddings and blocks, frozen.
  nn::ParamList frozen_params() const;
  // "queries": the trainable query embeddings.
  nn::ParamList query_params() const;

  static std::size_t expected_param_count(const VlmConfig& config);

 private:
  VlmConfig config_;
  Tensor token_embed_;  // [vocab, D]
  Tensor prompt_pos_;   // [max_prompt_len, D]
  Tensor query_pos_;    // [D]
  std::vector<nn::TransformerBlock> blocks_;
  Tensor queries_;  // [N_q, D]
};

}  // namespace parauni
