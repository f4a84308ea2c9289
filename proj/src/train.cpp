#include "parauni/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "parauni/errors.hpp"
#include "parauni/flow.hpp"
#include "parauni/grpo.hpp"
#include "parauni/checkpoint.hpp"

namespace parauni {

namespace {

constexpr std::uint64_t kStageStream = 0x5354;
constexpr std::uint64_t kRolloutStream = 3;
constexpr std::uint64_t kMaskStream = 4;
constexpr std::uint64_t kForwardStream = 5;

AdamW make_optimizer(const PipelineConfig& c, int stage) {
  AdamWConfig oc;
  oc.lr = stage == 1 ? c.stage1.lr : stage == 2 ? c.stage2.lr : c.stage3.grpo.lr;
  oc.weight_decay = c.weight_decay;
  return AdamW(oc);
}

void check_stage(int stage) {
  if (stage < 1 || stage > 3) throw ConfigError("stage must be 1, 2 or 3");
}

nn::ParamList trainable_params(const ModelBundle& b, const std::vector<ParamGroup>& groups) {
  nn::ParamList out;
  for (ParamGroup g : groups) {
    auto p = b.group(g);
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

// Conditions for the distinct prompts of a batch, built on the live graph.
std::map<int, Condition> batch_conditions(const ModelBundle& b, const SyntheticDataset& data,
                                          const std::vector<int>& prompt_ids, const LayerMaskSet& masks = {}) {
  std::map<int, Condition> out;
  for (int id : prompt_ids)
    if (!out.count(id)) out.emplace(id, b.condition(data.prompt(id).tokens, masks));
  return out;
}

void append_line(const std::string& path, const std::string& header, const std::string& line) {
  const bool exists = std::filesystem::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot append to '" + path + "'");
  if (!exists) out << header;
  out << line;
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::string metrics_line(const EpochRecord& r) {
  std::ostringstream s;
  write_metrics_record(s, r);
  return s.str();
}

std::string metrics_header() {
  std::ostringstream s;
  write_metrics_header(s);
  return s.str();
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
}

LayerMaskSet merge(const LayerMaskSet& base, const LayerMaskSet& over) {
  LayerMaskSet out = base;
  for (const auto& [layer, m] : over.entries()) out.set(layer, m);
  return out;
}

EpochRecord flow_epoch(TrainingState& s, const SyntheticDataset& data) {
  const auto& loop = s.stage == 1 ? s.config.stage1 : s.config.stage2;
  const auto& targets = s.stage == 1 ? data.stage1 : data.stage2;
  const auto groups = stage_trainable(s.stage);
  const auto params = trainable_params(s.bundle, groups);
  const auto all = s.bundle.all_params();
  const std::int64_t total = static_cast<std::int64_t>(loop.epochs) * loop.steps_per_epoch;

  EpochRecord rec;
  rec.stage = s.stage;
  rec.epoch = s.next_epoch + 1;
  double loss_sum = 0, gn_sum = 0;
  for (int step = 0; step < loop.steps_per_epoch; ++step) {
    // A few distinct prompts per batch, drawn without replacement.
    std::vector<int> pool(data.prompts.size());
    for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int>(i);
    const std::size_t k = std::min(pool.size(), static_cast<std::size_t>(loop.prompts_per_batch));
    for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + s.rng.below(pool.size() - i)]);
    std::vector<int> ids;
    std::vector<Tensor> x0;
    for (int i = 0; i < loop.batch; ++i) {
      const int p = pool[static_cast<std::size_t>(i) % k];
      const auto& ts = targets[static_cast<std::size_t>(p)];
      ids.push_back(p);
      x0.push_back(ts[s.rng.below(ts.size())]);
    }
    nn::clear_grads(all);
    const auto conds = batch_conditions(s.bundle, data, ids);
    std::vector<FlowExample> batch;
    for (std::size_t i = 0; i < ids.size(); ++i) batch.push_back({x0[i], conds.at(ids[i])});
    Tensor loss = fm_loss(s.bundle.denoiser, batch, s.rng);
    loss.backward();
    check_frozen(s.bundle, groups);
    gn_sum += grad_norm(params);
    loss_sum += loss.item();
    const float scale = loop.cosine ? cosine_lr_scale(s.optimizer.steps(), total) : 1.0f;
    s.optimizer.step(params, scale);
  }
  rec.loss = loss_sum / loop.steps_per_epoch;
  rec.grad_norm = gn_sum / loop.steps_per_epoch;
  return rec;
}

EpochRecord rl_epoch(TrainingState& s, const SyntheticDataset& data, std::ostream* events) {
  const auto& c = s.config.stage3;
  const RewardKind kind = c.rewards[static_cast<std::size_t>(s.reward_index)];
  const auto scorer = ScorerRegistry::global().make(reward_name(kind));
  const auto groups = stage_trainable(3);
  const auto params = trainable_params(s.bundle, groups);
  const auto r = static_cast<std::uint64_t>(s.reward_index), e = static_cast<std::uint64_t>(s.next_epoch);

  const LayerMaskSet masks = effective_masks(s, derive_seed(s.config.seed, {kForwardStream, r, e}));
  std::vector<int> ids;
  for (std::size_t j = 0; j < rl_prompt_count(s.config, data); ++j) ids.push_back(static_cast<int>(j));

  std::vector<RolloutGroup> rollouts;
  double reward_sum = 0;
  {
    NoGradGuard no_grad;
    for (int id : ids) {
      const Condition cond = s.bundle.condition(data.prompt(id).tokens, masks);
      rollouts.push_back(rollout_group(s.bundle.denoiser, cond, id, *scorer, c.grpo,
                                       rollout_seed(s.config, s.reward_index, s.next_epoch, id),
                                       s.bundle.sample_shape()));
      for (double v : rollouts.back().rewards) reward_sum += v;
    }
  }
  const ConditionFn condition = [&](int id) { return s.bundle.condition(data.prompt(id).tokens, masks); };
  nn::clear_grads(s.bundle.all_params());
  const PolicyReport report = policy_update(s.bundle.denoiser, condition, rollouts, c.grpo, s.optimizer, params);
  check_frozen(s.bundle, groups);

  EpochRecord rec;
  rec.stage = 3;
  rec.epoch = s.next_epoch + 1;
  rec.reward = reward_name(kind);
  rec.reward_value = reward_sum / static_cast<double>(ids.size() * static_cast<std::size_t>(c.grpo.group_size));
  rec.grad_norm = report.skipped ? 0.0 : report.grad_norm;
  rec.loss = -report.objective;
  if (c.ldam_enabled) {
    const auto d = observe(s.ldam, rec.grad_norm, rec.reward_value, kind, s.bundle.config().vlm.layers,
                           {s.bundle.config().vlm.queries, s.bundle.config().lim.out_width}, c.ldam,
                           derive_seed(s.config.seed, {kMaskStream, r, e}));
    rec.ldam = d.perturb ? "perturb" : "none";
    rec.gamma = d.gamma;
    if (events) write_event(*events, s.ldam, rec.grad_norm, rec.reward_value, d);
  }
  return rec;
}

}  // namespace

std::vector<ParamGroup> stage_trainable(int stage) {
  check_stage(stage);
  if (stage == 1) return {ParamGroup::Queries, ParamGroup::Lim};
  return {ParamGroup::Queries, ParamGroup::Lim, ParamGroup::Diffusion};
}

TrainingState TrainingState::fresh(const PipelineConfig& config, int stage) {
  check_stage(stage);
  config.validate();
  TrainingState s(config, ModelBundle::init(config.bundle(), derive_seed(config.seed, {0x6d6f64656c})));
  s.stage = stage;
  s.optimizer = make_optimizer(config, stage);
  s.rng = Rng(derive_seed(config.seed, {kStageStream, static_cast<std::uint64_t>(stage)}));
  return s;
}

TrainingState TrainingState::next_stage(const PipelineConfig& config, int stage, const TrainingState& previous) {
  TrainingState s = fresh(config, stage);
  std::map<std::string, Tensor> old;
  for (const auto& p : previous.bundle.all_params()) old.emplace(p.name, p.tensor);
  for (const auto& p : s.bundle.all_params()) {
    auto it = old.find(p.name);
    if (it == old.end()) throw ConfigError("checkpoint lacks parameter '" + p.name + "'; model config differs");
    if (it->second.shape() != p.tensor.shape())
      throw ConfigError("parameter '" + p.name + "' has a different shape in the checkpoint; model config differs");
    Tensor dst = p.tensor;
    std::copy(it->second.data().begin(), it->second.data().end(), dst.mutable_data().begin());
  }
  if (old.size() != s.bundle.all_params().size()) throw ConfigError("checkpoint has extra parameters; model config differs");
  // Stage III keeps masks installed by an earlier stage III run.
  s.carried = merge(previous.carried, previous.ldam.active_masks);
  return s;
}

bool EpochRecord::operator==(const EpochRecord& o) const {
  auto same = [](double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; };
  return stage == o.stage && epoch == o.epoch && reward == o.reward && same(loss, o.loss) &&
         same(reward_value, o.reward_value) && same(grad_norm, o.grad_norm) && ldam == o.ldam && same(gamma, o.gamma);
}

void write_metrics_header(std::ostream& out) { out << "stage,reward,epoch,loss,reward_value,grad_norm,ldam,gamma\n"; }

void write_metrics_record(std::ostream& out, const EpochRecord& r) {
  const auto old = out.precision(9);
  out << r.stage << ',' << r.reward << ',' << r.epoch << ',';
  if (!std::isnan(r.loss)) out << r.loss;
  out << ',';
  if (!std::isnan(r.reward_value)) out << r.reward_value;
  out << ',' << r.grad_norm << ',' << r.ldam << ',' << r.gamma << '\n';
  out.precision(old);
}

void check_frozen(const ModelBundle& bundle, const std::vector<ParamGroup>& trainable) {
  for (ParamGroup g : {ParamGroup::Vlm, ParamGroup::Queries, ParamGroup::Lim, ParamGroup::Diffusion}) {
    if (std::find(trainable.begin(), trainable.end(), g) != trainable.end()) continue;
    for (const auto& p : bundle.group(g))
      if (p.tensor.has_grad()) throw InvariantError("frozen parameter '" + p.name + "' received a gradient");
  }
}

double stage2_eval_loss(const PipelineConfig& config, const ModelBundle& bundle, const SyntheticDataset& data) {
  return eval_fm_loss(bundle, data, config.eval_repeats, derive_seed(config.seed, {0x6576616c}));
}

double eval_fm_loss(const ModelBundle& bundle, const SyntheticDataset& data, int repeats, std::uint64_t seed) {
  if (repeats < 1) throw DomainError("eval_fm_loss needs repeats >= 1");
  NoGradGuard no_grad;
  std::vector<FlowExample> batch;
  for (const auto& p : data.prompts) {
    const Condition c = bundle.condition(p.tokens);
    for (const auto& t : data.eval[static_cast<std::size_t>(p.id)]) batch.push_back({t, c});
  }
  if (batch.empty()) throw EmptyError("no evaluation targets");
  Rng rng(seed);
  double acc = 0;
  for (int i = 0; i < repeats; ++i) acc += fm_loss(bundle.denoiser, batch, rng).item();
  return acc / repeats;
}

std::uint64_t rollout_seed(const PipelineConfig& config, int reward_index, int epoch, int prompt) {
  return derive_seed(config.seed, {kRolloutStream, static_cast<std::uint64_t>(reward_index),
                                   static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(prompt)});
}

std::size_t rl_prompt_count(const PipelineConfig& config, const SyntheticDataset& data) {
  return std::min<std::size_t>(data.prompts.size(), static_cast<std::size_t>(config.stage3.prompts_per_epoch));
}

LayerMaskSet effective_masks(const TrainingState& state, std::uint64_t forward_seed) {
  return merge(state.carried, apply_masks(state.ldam, state.config.stage3.ldam, forward_seed));
}

std::string checkpoint_path(const PipelineConfig& config, int stage, int epoch) {
  std::string name = "stage" + std::to_string(stage);
  if (epoch >= 0) name += "_epoch" + std::to_string(epoch);
  return config.out_dir + "/" + name + ".ckpt";
}

std::vector<EpochRecord> run_stage(TrainingState& s, const SyntheticDataset& data, const RunOptions& options) {
  check_stage(s.stage);
  if (s.complete) throw ConfigError("stage " + std::to_string(s.stage) + " is already complete");
  if (data.prompts.empty()) throw EmptyError("dataset has no prompts");
  if (Shape{data.rows, data.cols} != s.bundle.sample_shape())
    throw ConfigError("dataset sample shape does not match the denoiser");
  const auto groups = stage_trainable(s.stage);
  s.bundle.set_trainable(groups);
  if (options.write_files) ensure_dir(s.config.out_dir);

  std::vector<EpochRecord> records;
  int budget = options.stop_after;
  const int every = s.stage == 1   ? s.config.stage1.checkpoint_every
                    : s.stage == 2 ? s.config.stage2.checkpoint_every
                                   : s.config.stage3.checkpoint_every;
  while (!s.complete && budget != 0) {
    const int epochs = s.stage == 1 ? s.config.stage1.epochs : s.stage == 2 ? s.config.stage2.epochs
                                                                            : s.config.stage3.epochs_per_reward;
    // Counts across rewards in stage III.
    const int global_epoch = s.reward_index * epochs + s.next_epoch + 1;
    EpochRecord rec;
    if (s.stage < 3) {
      rec = flow_epoch(s, data);
    } else {
      std::ostringstream events;
      rec = rl_epoch(s, data, &events);
      if (options.write_files && s.config.stage3.ldam_enabled) {
        std::ostringstream header;
        write_event_header(header);
        append_line(s.config.out_dir + "/ldam_events_" + rec.reward + ".csv", header.str(), events.str());
      }
    }
    ++s.next_epoch;
    if (s.next_epoch >= epochs) {
      if (s.stage < 3 || ++s.reward_index >= static_cast<int>(s.config.stage3.rewards.size())) {
        s.complete = true;
      } else {
        s.next_epoch = 0;
      }
      if (s.stage == 3) {
        // Masks of a finished reward stay installed for the rewards after it.
        s.carried = merge(s.carried, s.ldam.active_masks);
        s.ldam = LdamState{};
      }
    }
    records.push_back(rec);
    if (options.write_files) {
      append_line(s.config.out_dir + "/metrics.csv", metrics_header(), metrics_line(rec));
      if (every > 0 && global_epoch % every == 0 && !s.complete)
        save_checkpoint(s, checkpoint_path(s.config, s.stage, global_epoch));
    }
    if (options.on_epoch) options.on_epoch(rec, s);
    if (budget > 0) --budget;
  }
  if (options.write_files && s.complete) save_checkpoint(s, checkpoint_path(s.config, s.stage));
  return records;
}

}  // namespace parauni
