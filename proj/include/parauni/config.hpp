#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "parauni/bundle.hpp"
#include "parauni/grpo.hpp"
#include "parauni/ldam.hpp"
#include "parauni/rewards.hpp"

namespace parauni {

// `section.key = value` lines; '#' starts a comment. Throws ConfigError with
// the line number for malformed or duplicate entries.
std::map<std::string, std::string> parse_key_values(const std::string& text);

struct DataConfig {
  std::string dir = "run/data";
  int prompts = 16;
  int targets_per_prompt = 8;
  int eval_targets_per_prompt = 4;
  int prompt_len = 6;
  float stage1_noise = 0.3f;   // target noise of the alignment data
  float stage2_noise = 0.05f;  // the "high-quality" data
};

struct LoopConfig {
  int epochs = 10;
  int steps_per_epoch = 10;
  int batch = 16;
  int prompts_per_batch = 4;  // distinct prompts per batch; each costs one VLM pass
  float lr = 1e-3f;
  bool cosine = false;       // cosine decay over the stage
  int checkpoint_every = 0;  // epochs; 0 writes only the final checkpoint
};

struct Stage3Config {
  std::vector<RewardKind> rewards{RewardKind::Quality, RewardKind::Preference, RewardKind::Alignment};
  int epochs_per_reward = 50;
  int prompts_per_epoch = 4;
  GrpoConfig grpo;
  bool ldam_enabled = true;
  LdamConfig ldam;
  int checkpoint_every = 0;
};

struct AnalysisConfig {
  int prompts = 8;
  int samples = 4;
  int steps = 10;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "run";

  std::size_t layers = 28;
  std::size_t width = 32;
  std::size_t queries = 16;
  std::size_t vocab = 64;
  std::size_t heads = 4;
  std::size_t max_prompt_len = 8;
  std::string conditioning = "all";
  std::size_t lim_depth = 1;
  bool lim_layer_embed = false;
  bool lim_layernorm = true;
  std::size_t cond_width = 32;
  std::size_t rows = 8, cols = 8;
  std::size_t denoiser_width = 32;
  std::size_t denoiser_blocks = 2;

  DataConfig data;
  float weight_decay = 0.05f;
  LoopConfig stage1;
  LoopConfig stage2;
  Stage3Config stage3;
  int eval_repeats = 4;
  int sample_steps = 10;
  AnalysisConfig analysis;

  PipelineConfig();

  BundleConfig bundle() const;
  // Cross-field checks; throws ConfigError.
  void validate() const;

  // Applies entries over the defaults; unknown keys throw ConfigError.
  static PipelineConfig from_text(const std::string& text);
  static PipelineConfig from_file(const std::string& path);
  // Every key with its resolved value, in a fixed order.
  std::string to_text() const;
};

// PARAUNI_SEED, when set, replaces run.seed. Throws ConfigError if malformed.
void apply_env_overrides(PipelineConfig& config);

}  // namespace parauni
