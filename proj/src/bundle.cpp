#include "parauni/bundle.hpp"

#include <algorithm>
#include <sstream>

#include "parauni/errors.hpp"

namespace parauni {

void BundleConfig::validate() const {
  vlm.validate();
  lim.validate();
  denoiser.validate();
  if (lim.width != vlm.width) throw ConfigError("lim width must equal the vlm width");
  if (lim.layers != vlm.layers) throw ConfigError("lim layer count must equal the vlm layer count");
  if (lim.out_width != denoiser.cond_width) throw ConfigError("lim output width must equal denoiser.cond_width");
  if (mode == ConditionMode::Single && (single_layer < 1 || single_layer > vlm.layers))
    throw ConfigError("conditioning layer out of range");
  if (mode == ConditionMode::Subset) {
    if (subset.empty()) throw ConfigError("conditioning subset is empty");
    if (*subset.begin() < 1 || *subset.rbegin() > vlm.layers) throw ConfigError("conditioning subset out of range");
  }
}

namespace {

std::size_t parse_index(const std::string& s) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(s, &pos);
  } catch (const std::exception&) {
    throw ConfigError("bad layer index '" + s + "'");
  }
  if (pos != s.size()) throw ConfigError("bad layer index '" + s + "'");
  return v;
}

}  // namespace

void parse_condition_mode(const std::string& text, BundleConfig& config) {
  if (text == "all") {
    config.mode = ConditionMode::All;
  } else if (text == "last") {
    config.mode = ConditionMode::Last;
  } else if (text.rfind("single:", 0) == 0) {
    config.mode = ConditionMode::Single;
    config.single_layer = parse_index(text.substr(7));
  } else if (text.rfind("subset:", 0) == 0) {
    config.mode = ConditionMode::Subset;
    config.subset.clear();
    std::stringstream ss(text.substr(7));
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto dash = item.find('-');
      if (dash == std::string::npos) {
        config.subset.insert(parse_index(item));
      } else {
        const std::size_t lo = parse_index(item.substr(0, dash)), hi = parse_index(item.substr(dash + 1));
        if (lo > hi) throw ConfigError("bad layer range '" + item + "'");
        for (std::size_t i = lo; i <= hi; ++i) config.subset.insert(i);
      }
    }
    if (config.subset.empty()) throw ConfigError("conditioning subset is empty");
  } else {
    throw ConfigError("unknown conditioning mode '" + text + "'");
  }
}

std::string condition_mode_string(const BundleConfig& config) {
  switch (config.mode) {
    case ConditionMode::All:
      return "all";
    case ConditionMode::Last:
      return "last";
    case ConditionMode::Single:
      return "single:" + std::to_string(config.single_layer);
    case ConditionMode::Subset: {
      std::string out = "subset:";
      bool first = true;
      for (std::size_t i : config.subset) {
        out += (first ? "" : ",") + std::to_string(i);
        first = false;
      }
      return out;
    }
  }
  return "all";
}

const char* group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::Vlm:
      return "vlm";
    case ParamGroup::Queries:
      return "queries";
    case ParamGroup::Lim:
      return "lim";
    case ParamGroup::Diffusion:
      return "diffusion";
  }
  return "?";
}

ModelBundle ModelBundle::init(const BundleConfig& config, std::uint64_t seed) {
  config.validate();
  return ModelBundle(MiniVlm::init(config.vlm, derive_seed(seed, {1})),
                     LayerIntegration::init(config.lim, derive_seed(seed, {2})),
                     Denoiser::init(config.denoiser, derive_seed(seed, {3})), config);
}

Condition ModelBundle::condition(const LayerFeatures& features, const LayerMaskSet& masks) const {
  switch (config_.mode) {
    case ConditionMode::All:
      return lim.integrate(features, masks);
    case ConditionMode::Last:
      return lim.integrate_subset(features, {features.size()}, masks);
    case ConditionMode::Single:
      return lim.integrate_subset(features, {config_.single_layer}, masks);
    case ConditionMode::Subset:
      return lim.integrate_subset(features, config_.subset, masks);
  }
  return lim.integrate(features, masks);
}

nn::ParamList ModelBundle::group(ParamGroup group) const {
  switch (group) {
    case ParamGroup::Vlm:
      return vlm.frozen_params();
    case ParamGroup::Queries:
      return vlm.query_params();
    case ParamGroup::Lim:
      return lim.params();
    case ParamGroup::Diffusion:
      return denoiser.params();
  }
  return {};
}

nn::ParamList ModelBundle::all_params() const {
  nn::ParamList out;
  for (ParamGroup g : {ParamGroup::Vlm, ParamGroup::Queries, ParamGroup::Lim, ParamGroup::Diffusion}) {
    auto p = group(g);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void ModelBundle::set_trainable(std::span<const ParamGroup> trainable) const {
  for (ParamGroup g : {ParamGroup::Vlm, ParamGroup::Queries, ParamGroup::Lim, ParamGroup::Diffusion})
    nn::set_trainable(group(g), std::find(trainable.begin(), trainable.end(), g) != trainable.end());
}

}  // namespace parauni
