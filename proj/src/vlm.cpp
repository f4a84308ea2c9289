#include "parauni/vlm.hpp"

#include <string>

#include "parauni/errors.hpp"
#include "parauni/ops.hpp"

namespace parauni {

void VlmConfig::validate() const {
  if (layers < 1) throw ConfigError("vlm.layers must be >= 1");
  if (width < 1 || heads < 1 || width % heads != 0)
    throw ConfigError("vlm.width (" + std::to_string(width) + ") must be divisible by vlm.heads (" +
                      std::to_string(heads) + ")");
  if (queries < 1) throw ConfigError("vlm.queries must be >= 1");
  if (vocab < 1) throw ConfigError("vlm.vocab must be >= 1");
  if (max_prompt_len < 1) throw ConfigError("vlm.max_prompt_len must be >= 1");
}

const Tensor& LayerFeatures::layer(std::size_t index) const {
  if (index < 1 || index > per_layer.size())
    throw IndexError("layer " + std::to_string(index) + " outside [1, " +
                     std::to_string(per_layer.size()) + "]");
  return per_layer[index - 1];
}

MiniVlm MiniVlm::init(const VlmConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  MiniVlm m;
  m.config_ = config;
  const std::size_t d = config.width;
  m.token_embed_ = Tensor::randn({config.vocab, d}, rng);
  m.prompt_pos_ = Tensor::randn({config.max_prompt_len, d}, rng, 0.5f);
  m.query_pos_ = Tensor::randn({d}, rng, 0.5f);
  for (std::size_t i = 0; i < config.layers; ++i)
    m.blocks_.push_back(nn::TransformerBlock::init(d, config.heads, rng, false));
  m.queries_ = Tensor::randn({config.queries, d}, rng, 1.0f, true);
  return m;
}

LayerFeatures MiniVlm::forward_collect(std::span<const int> prompt, const Tensor& queries) const {
  if (prompt.empty()) throw EmptyError("prompt must contain at least one token");
  if (prompt.size() > config_.max_prompt_len)
    throw DomainError("prompt length " + std::to_string(prompt.size()) + " exceeds vlm.max_prompt_len " +
                      std::to_string(config_.max_prompt_len));
  if (queries.rank() != 2 || queries.dim(0) != config_.queries || queries.dim(1) != config_.width)
    throw ShapeError("queries " + shape_str(queries.shape()) + " do not match [" +
                     std::to_string(config_.queries) + "," + std::to_string(config_.width) + "]");

  const std::size_t p = prompt.size();
  Tensor tokens = ops::add(ops::embedding(token_embed_, prompt), ops::slice(prompt_pos_, 0, 0, p));
  Tensor q = ops::add_row(queries, query_pos_);
  Tensor h = ops::concat(std::vector<Tensor>{tokens, q}, 0);

  LayerFeatures out;
  out.per_layer.reserve(blocks_.size());
  for (const auto& block : blocks_) {
    h = block(h, true);
    out.per_layer.push_back(ops::slice(h, 0, p, p + config_.queries));
  }
  return out;
}

nn::ParamList MiniVlm::frozen_params() const {
  nn::ParamList out{{"vlm.token_embed", token_embed_},
                    {"vlm.prompt_pos", prompt_pos_},
                    {"vlm.query_pos", query_pos_}};
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect(out, "vlm.block" + std::to_string(i + 1));
  return out;
}

nn::ParamList MiniVlm::query_params() const { return {{"queries", queries_}}; }

std::size_t MiniVlm::expected_param_count(const VlmConfig& c) {
  return c.layers * nn::TransformerBlock::param_count(c.width) + c.vocab * c.width +
         c.max_prompt_len * c.width + c.width + c.queries * c.width;
}

}  // namespace parauni
