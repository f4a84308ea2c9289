#include "parauni/rewards.hpp"

#include <algorithm>
#include <cmath>

#include "parauni/errors.hpp"
#include "parauni/rng.hpp"

namespace parauni {

const char* reward_name(RewardKind kind) {
  switch (kind) {
    case RewardKind::Alignment: return "alignment";
    case RewardKind::Quality: return "quality";
    case RewardKind::Preference: return "preference";
  }
  return "?";
}

RewardKind parse_reward_kind(const std::string& name) {
  if (name == "alignment") return RewardKind::Alignment;
  if (name == "quality") return RewardKind::Quality;
  if (name == "preference") return RewardKind::Preference;
  throw ConfigError("unknown reward kind '" + name + "'");
}

std::vector<float> alignment_target(int prompt_id, std::size_t dim) {
  Rng rng(derive_seed(kAlignmentTargetSeed, {static_cast<std::uint64_t>(prompt_id)}));
  std::vector<float> out(dim);
  for (float& v : out) v = rng.normal();
  return out;
}

double alignment_reward(const Tensor& sample, int prompt_id) {
  const auto x = sample.data();
  const auto target = alignment_target(prompt_id, x.size());
  double dot = 0, nx = 0, nt = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += static_cast<double>(x[i]) * target[i];
    nx += static_cast<double>(x[i]) * x[i];
    nt += static_cast<double>(target[i]) * target[i];
  }
  if (nx == 0.0) return 0.0;
  return std::clamp(dot / std::sqrt(nx * nt), -1.0, 1.0);
}

double quality_reward(const Tensor& sample) {
  double ss = 0;
  for (float v : sample.data()) ss += static_cast<double>(v) * v;
  const double rms = std::sqrt(ss / static_cast<double>(sample.numel()));
  return std::exp(-std::fabs(rms - 1.0));
}

double preference_reward(const Tensor& sample, int prompt_id, double w) {
  if (!(w >= 0.0 && w <= 1.0)) throw DomainError("preference weight " + std::to_string(w) + " outside [0, 1]");
  if (w == 1.0) return alignment_reward(sample, prompt_id);
  if (w == 0.0) return quality_reward(sample);
  return w * alignment_reward(sample, prompt_id) + (1.0 - w) * quality_reward(sample);
}

ToyScorer::ToyScorer(RewardKind kind, double preference_weight) : kind_(kind), weight_(preference_weight) {
  if (!(weight_ >= 0.0 && weight_ <= 1.0))
    throw DomainError("preference weight " + std::to_string(weight_) + " outside [0, 1]");
}

double ToyScorer::score(const Tensor& sample, int prompt_id) const {
  switch (kind_) {
    case RewardKind::Alignment: return alignment_reward(sample, prompt_id);
    case RewardKind::Quality: return quality_reward(sample);
    case RewardKind::Preference: return preference_reward(sample, prompt_id, weight_);
  }
  return 0.0;
}

ScorerRegistry::ScorerRegistry() {
  for (RewardKind k : {RewardKind::Alignment, RewardKind::Quality, RewardKind::Preference})
    add(reward_name(k), [k]() { return std::make_unique<ToyScorer>(k); });
}

ScorerRegistry& ScorerRegistry::global() {
  static ScorerRegistry registry;
  return registry;
}

void ScorerRegistry::add(const std::string& name, ScorerFactory factory) {
  for (auto& [n, f] : entries_)
    if (n == name) {
      f = std::move(factory);
      return;
    }
  entries_.emplace_back(name, std::move(factory));
}

bool ScorerRegistry::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::unique_ptr<Scorer> ScorerRegistry::make(const std::string& name) const {
  for (const auto& [n, f] : entries_)
    if (n == name) return f();
  throw ConfigError("no scorer registered for reward.kind = '" + name + "'");
}

double grad_norm(const nn::ParamList& params) {
  double ss = 0;
  bool any = false;
  for (const auto& p : params) {
    if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
    any = true;
    for (float g : p.tensor.grad()) ss += static_cast<double>(g) * g;
  }
  if (!any) throw AbsenceError("grad_norm: no trainable parameter holds a gradient");
  return std::sqrt(ss);
}

}  // namespace parauni
