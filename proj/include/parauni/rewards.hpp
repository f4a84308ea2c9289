#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "parauni/nn.hpp"
#include "parauni/tensor.hpp"

namespace parauni {

// Toy stand-ins: Alignment for CLIP score, Quality for the aesthetic score,
// Preference for Pickscore.
enum class RewardKind { Alignment, Quality, Preference };

const char* reward_name(RewardKind kind);
// Accepts "alignment", "quality", "preference". Throws ConfigError otherwise.
RewardKind parse_reward_kind(const std::string& name);

struct RewardReport {
  RewardKind kind = RewardKind::Alignment;
  double value = 0.0;
  int prompt_id = 0;
  int sample_id = 0;
};

inline constexpr std::uint64_t kAlignmentTargetSeed = 0x616c69676eULL;
inline constexpr double kDefaultPreferenceWeight = 0.5;

// Unit-free target direction for a prompt: N(0, I) draws from a stream seeded
// by the prompt id.
std::vector<float> alignment_target(int prompt_id, std::size_t dim);

// Cosine between the flattened sample and the prompt's target; 0 for a zero sample.
double alignment_reward(const Tensor& sample, int prompt_id);
// exp(-| ‖x‖₂/√dim - 1 |)
double quality_reward(const Tensor& sample);
// w·alignment + (1-w)·quality. Throws DomainError unless 0 <= w <= 1.
double preference_reward(const Tensor& sample, int prompt_id, double w = kDefaultPreferenceWeight);

// (sample, prompt) -> finite score.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual double score(const Tensor& sample, int prompt_id) const = 0;
  virtual std::string name() const = 0;
};

class ToyScorer final : public Scorer {
 public:
  explicit ToyScorer(RewardKind kind, double preference_weight = kDefaultPreferenceWeight);
  double score(const Tensor& sample, int prompt_id) const override;
  std::string name() const override { return reward_name(kind_); }
  RewardKind kind() const { return kind_; }

 private:
  RewardKind kind_;
  double weight_;
};

using ScorerFactory = std::function<std::unique_ptr<Scorer>()>;

// Scorers looked up by the `reward.kind` config value. The three toys are
// registered up front; plug-ins may add or replace entries.
class ScorerRegistry {
 public:
  static ScorerRegistry& global();

  void add(const std::string& name, ScorerFactory factory);
  bool contains(const std::string& name) const;
  // Throws ConfigError for an unknown name.
  std::unique_ptr<Scorer> make(const std::string& name) const;

 private:
  ScorerRegistry();
  std::vector<std::pair<std::string, ScorerFactory>> entries_;
};

// Global L2 norm over the gradients of parameters that require grad. Missing
// buffers count as zero; throws AbsenceError when none of them has one.
double grad_norm(const nn::ParamList& params);

}  // namespace parauni
