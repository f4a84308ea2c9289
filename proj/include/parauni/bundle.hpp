#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>

#include "parauni/flow.hpp"
#include "parauni/lim.hpp"
#include "parauni/vlm.hpp"

namespace parauni {

// How the LIM output becomes the denoiser condition.
enum class ConditionMode { All, Last, Single, Subset };

struct BundleConfig {
  VlmConfig vlm;
  LimConfig lim;
  DenoiserConfig denoiser;
  ConditionMode mode = ConditionMode::All;
  std::size_t single_layer = 1;       // ConditionMode::Single
  std::set<std::size_t> subset;       // ConditionMode::Subset

  // Cross-module widths must agree. Throws ConfigError.
  void validate() const;
};

// "all", "last", "single:K", "subset:A-B,C". Throws ConfigError.
void parse_condition_mode(const std::string& text, BundleConfig& config);
std::string condition_mode_string(const BundleConfig& config);

enum class ParamGroup { Vlm, Queries, Lim, Diffusion };
const char* group_name(ParamGroup group);

class ModelBundle {
 public:
  static ModelBundle init(const BundleConfig& config, std::uint64_t seed);

  LayerFeatures features(std::span<const int> prompt) const { return vlm.forward_collect(prompt); }
  // Condition for the configured mode. Masks apply to the fused layers.
  Condition condition(const LayerFeatures& features, const LayerMaskSet& masks = {}) const;
  Condition condition(std::span<const int> prompt, const LayerMaskSet& masks = {}) const {
    return condition(features(prompt), masks);
  }

  nn::ParamList group(ParamGroup group) const;
  // Every parameter, VLM included, in a fixed order.
  nn::ParamList all_params() const;
  // Groups in `trainable` require grad, the rest are frozen.
  void set_trainable(std::span<const ParamGroup> trainable) const;

  const BundleConfig& config() const { return config_; }
  Shape sample_shape() const { return {config_.denoiser.rows, config_.denoiser.cols}; }

  MiniVlm vlm;
  LayerIntegration lim;
  Denoiser denoiser;

 private:
  ModelBundle(MiniVlm v, LayerIntegration l, Denoiser d, BundleConfig c)
      : vlm(std::move(v)), lim(std::move(l)), denoiser(std::move(d)), config_(std::move(c)) {}

  BundleConfig config_;
};

}  // namespace parauni
