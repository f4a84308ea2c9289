#include "parauni/lim.hpp"

#include <string>

#include "parauni/errors.hpp"
#include "parauni/ops.hpp"

namespace parauni {

void LimConfig::validate() const {
  if (width < 1 || out_width < 1) throw ConfigError("lim widths must be >= 1");
  if (layers < 1) throw ConfigError("lim.layers must be >= 1");
  if (depth < 1) throw ConfigError("lim.depth must be >= 1");
  if (heads < 1 || width % heads != 0)
    throw ConfigError("lim width " + std::to_string(width) + " not divisible by lim.heads " +
                      std::to_string(heads));
}

const Tensor* LayerMaskSet::find(std::size_t layer) const {
  auto it = masks_.find(layer);
  return it == masks_.end() ? nullptr : &it->second;
}

LayerIntegration LayerIntegration::init(const LimConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  LayerIntegration lim;
  lim.config_ = config;
  for (std::size_t i = 0; i < config.depth; ++i)
    lim.encoder_.push_back(nn::TransformerBlock::init(config.width, config.heads, rng, true));
  if (config.out_width != config.width)
    lim.projection_ = nn::Linear::init(config.width, config.out_width, rng, true);
  lim.norm_ = nn::LayerNorm::init(config.out_width, true);
  if (config.layer_embed) lim.layer_embed_ = Tensor::randn({config.layers, config.width}, rng, 0.1f, true);
  return lim;
}

Tensor LayerIntegration::encode_layer(const Tensor& q, std::size_t layer) const {
  if (q.rank() != 2 || q.dim(1) != config_.width)
    throw ShapeError("encode_layer: features " + shape_str(q.shape()) + " do not have width " +
                     std::to_string(config_.width));
  Tensor h = q;
  if (config_.layer_embed) {
    if (layer < 1 || layer > config_.layers)
      throw IndexError("encode_layer: layer " + std::to_string(layer) + " outside [1, " +
                       std::to_string(config_.layers) + "]");
    h = ops::add_row(h, ops::slice(layer_embed_, 0, layer - 1, layer));
  }
  for (const auto& block : encoder_) h = block(h, false);
  if (projection_) h = (*projection_)(h);
  return config_.use_layernorm ? norm_(h) : h;
}

void LayerIntegration::check_features(const LayerFeatures& features) const {
  if (features.size() != config_.layers)
    throw ShapeError("expected features from " + std::to_string(config_.layers) + " layers, got " +
                     std::to_string(features.size()));
}

void LayerIntegration::check_masks(const LayerMaskSet& masks, std::size_t layers) const {
  for (const auto& [layer, mask] : masks.entries()) {
    if (layer < 1 || layer > layers)
      throw IndexError("mask for layer " + std::to_string(layer) + " outside [1, " +
                       std::to_string(layers) + "]");
    (void)mask;
  }
}

Condition LayerIntegration::integrate(const LayerFeatures& features, const LayerMaskSet& masks) const {
  check_features(features);
  std::set<std::size_t> all;
  for (std::size_t i = 1; i <= features.size(); ++i) all.insert(i);
  return integrate_subset(features, all, masks);
}

Condition LayerIntegration::integrate_single(const LayerFeatures& features, std::size_t layer) const {
  check_features(features);
  return {encode_layer(features.layer(layer), layer)};
}

Condition LayerIntegration::integrate_subset(const LayerFeatures& features,
                                             const std::set<std::size_t>& keep,
                                             const LayerMaskSet& masks) const {
  check_features(features);
  if (keep.empty()) throw EmptyError("integrate_subset: no layers kept");
  check_masks(masks, features.size());
  Tensor acc;
  for (std::size_t layer : keep) {
    Tensor c = encode_layer(features.layer(layer), layer);
    if (const Tensor* mask = masks.find(layer)) c = ops::mul(c, *mask);
    acc = acc.defined() ? ops::add(acc, c) : c;
  }
  if (keep.size() == 1) return {acc};
  return {ops::scale(acc, 1.0f / static_cast<float>(keep.size()))};
}

nn::ParamList LayerIntegration::params() const {
  nn::ParamList out;
  for (std::size_t i = 0; i < encoder_.size(); ++i)
    encoder_[i].collect(out, "lim.encoder" + std::to_string(i + 1));
  if (projection_) projection_->collect(out, "lim.projection");
  norm_.collect(out, "lim.norm");
  if (layer_embed_.defined()) out.push_back({"lim.layer_embed", layer_embed_});
  return out;
}

}  // namespace parauni
