#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "parauni/bundle.hpp"
#include "parauni/config.hpp"
#include "parauni/dataset.hpp"
#include "parauni/ldam.hpp"
#include "parauni/optim.hpp"

namespace parauni {

// Trainable groups per stage: I {queries, LIM}; II and III add the diffusion model.
std::vector<ParamGroup> stage_trainable(int stage);

// Everything a stage needs to continue exactly where it stopped.
struct TrainingState {
  TrainingState(PipelineConfig c, ModelBundle b) : config(std::move(c)), bundle(std::move(b)) {}

  PipelineConfig config;
  ModelBundle bundle;
  int stage = 1;
  int next_epoch = 0;
  int reward_index = 0;  // stage III: position in config.stage3.rewards
  bool complete = false;
  AdamW optimizer;
  Rng rng;
  LdamState ldam;
  LayerMaskSet carried;  // masks kept from rewards already trained

  // New stage on freshly initialized weights.
  static TrainingState fresh(const PipelineConfig& config, int stage);
  // New stage starting from the weights of `previous`; optimizer, RNG and
  // controller start over.
  static TrainingState next_stage(const PipelineConfig& config, int stage, const TrainingState& previous);
};

struct EpochRecord {
  int stage = 1;
  int epoch = 0;  // 1-based within the stage, or within the reward in stage III
  std::string reward = "-";
  double loss = std::numeric_limits<double>::quiet_NaN();
  double reward_value = std::numeric_limits<double>::quiet_NaN();
  double grad_norm = 0.0;
  std::string ldam = "-";
  double gamma = 0.0;

  bool operator==(const EpochRecord& o) const;
};

void write_metrics_header(std::ostream& out);
void write_metrics_record(std::ostream& out, const EpochRecord& r);

struct RunOptions {
  int stop_after = -1;  // epochs to run in this call; -1 runs to the end
  bool write_files = true;  // metrics, event logs and checkpoints under config.out_dir
  std::function<void(const EpochRecord&, TrainingState&)> on_epoch;
};

// Runs the remaining epochs of state.stage. Throws InvariantError when a
// frozen group receives a gradient.
std::vector<EpochRecord> run_stage(TrainingState& state, const SyntheticDataset& data, const RunOptions& options = {});

// Raises InvariantError naming the first parameter outside `trainable` that holds a gradient.
void check_frozen(const ModelBundle& bundle, const std::vector<ParamGroup>& trainable);

// fm_loss over the held-out targets, averaged over `repeats` draws of (t, ε)
// from `seed`.
double eval_fm_loss(const ModelBundle& bundle, const SyntheticDataset& data, int repeats, std::uint64_t seed);

// The held-out loss reported after stage II.
double stage2_eval_loss(const PipelineConfig& config, const ModelBundle& bundle, const SyntheticDataset& data);

// Seed of the rollout group for one prompt in stage III; epoch is 0-based.
std::uint64_t rollout_seed(const PipelineConfig& config, int reward_index, int epoch, int prompt);
// Prompts rolled out every stage III epoch: 0..n-1.
std::size_t rl_prompt_count(const PipelineConfig& config, const SyntheticDataset& data);

// Masks in effect for the next forward pass of stage III.
LayerMaskSet effective_masks(const TrainingState& state, std::uint64_t forward_seed);

std::string checkpoint_path(const PipelineConfig& config, int stage, int epoch = -1);

}  // namespace parauni
