#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "parauni/condition.hpp"
#include "parauni/nn.hpp"
#include "parauni/vlm.hpp"

namespace parauni {

struct LimConfig {
  std::size_t width = 32;      // D of the incoming query features
  std::size_t out_width = 32;  // D_c; a projection is added when it differs from width
  std::size_t layers = 28;     // L, for the optional layer embedding and mask validation
  std::size_t heads = 4;
  std::size_t depth = 1;       // transformer blocks in the shared encoder
  bool layer_embed = false;
  bool use_layernorm = true;

  void validate() const;
};

// Multiplicative masks M_i keyed by 1-based layer index. Absent layers use
// the identity.
class LayerMaskSet {
 public:
  void set(std::size_t layer, Tensor mask) { masks_[layer] = std::move(mask); }
  const Tensor* find(std::size_t layer) const;
  bool empty() const { return masks_.empty(); }
  std::size_t size() const { return masks_.size(); }
  const std::map<std::size_t, Tensor>& entries() const { return masks_; }
  void clear() { masks_.clear(); }

 private:
  std::map<std::size_t, Tensor> masks_;
};

// Layer Integration Module: c_i = LN(f(q_i)) with one shared f for every
// layer, mean-fused across layers into the condition.
class LayerIntegration {
 public:
  static LayerIntegration init(const LimConfig& config, std::uint64_t seed);

  // layer (1-based) is only read when the layer embedding is enabled.
  Tensor encode_layer(const Tensor& q, std::size_t layer = 0) const;

  Condition integrate(const LayerFeatures& features, const LayerMaskSet& masks = {}) const;
  Condition integrate_single(const LayerFeatures& features, std::size_t layer) const;
  Condition integrate_subset(const LayerFeatures& features, const std::set<std::size_t>& keep,
                             const LayerMaskSet& masks = {}) const;

  const LimConfig& config() const { return config_; }
  nn::ParamList params() const;  // "lim.*"

 private:
  void check_features(const LayerFeatures& features) const;
  void check_masks(const LayerMaskSet& masks, std::size_t layers) const;

  LimConfig config_;
  std::vector<nn::TransformerBlock> encoder_;
  std::optional<nn::Linear> projection_;
  nn::LayerNorm norm_;
  Tensor layer_embed_;  // [L, D] when enabled
};

}  // namespace parauni
