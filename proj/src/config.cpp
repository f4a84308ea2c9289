#include "parauni/config.hpp"

#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "parauni/binio.hpp"
#include "parauni/errors.hpp"

namespace parauni {

std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(number) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(number) + ": empty key");
    if (!out.emplace(key, value).second)
      throw ConfigError("line " + std::to_string(number) + ": duplicate key '" + key + "'");
  }
  return out;
}

namespace {

template <typename T>
void parse_number(const std::string& key, const std::string& v, T& out) {
  T value{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), value);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("'" + key + "': cannot parse '" + v + "'");
  out = value;
}

void parse_value(const std::string& key, const std::string& v, bool& out) {
  if (v == "true" || v == "1")
    out = true;
  else if (v == "false" || v == "0")
    out = false;
  else
    throw ConfigError("'" + key + "': expected true or false, got '" + v + "'");
}
void parse_value(const std::string&, const std::string& v, std::string& out) { out = v; }
void parse_value(const std::string& key, const std::string& v, int& out) { parse_number(key, v, out); }
void parse_value(const std::string& key, const std::string& v, std::size_t& out) { parse_number(key, v, out); }
void parse_value(const std::string& key, const std::string& v, float& out) { parse_number(key, v, out); }
void parse_value(const std::string& key, const std::string& v, double& out) { parse_number(key, v, out); }
void parse_value(const std::string& key, const std::string& v, std::vector<RewardKind>& out) {
  out.clear();
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' '), e = item.find_last_not_of(' ');
    if (b == std::string::npos) throw ConfigError("'" + key + "': empty reward name");
    out.push_back(parse_reward_kind(item.substr(b, e - b + 1)));
  }
  if (out.empty()) throw ConfigError("'" + key + "': reward list is empty");
}

std::string format(bool v) { return v ? "true" : "false"; }
std::string format(const std::string& v) { return v; }
std::string format(int v) { return std::to_string(v); }
std::string format(std::size_t v) { return std::to_string(v); }
std::string format(float v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string format(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
std::string format(const std::vector<RewardKind>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::string(reward_name(v[i]));
  return out;
}

struct Field {
  const char* key;
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

#define PARAUNI_FIELD(KEY, MEMBER)                                                         \
  Field {                                                                                  \
    KEY, [](PipelineConfig& c, const std::string& v) { parse_value(KEY, v, c.MEMBER); }, \
        [](const PipelineConfig& c) { return format(c.MEMBER); }                          \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"run.seed", [](PipelineConfig& c, const std::string& v) { parse_number("run.seed", v, c.seed); },
            [](const PipelineConfig& c) { return std::to_string(c.seed); }},
      PARAUNI_FIELD("run.out_dir", out_dir),
      PARAUNI_FIELD("model.layers", layers),
      PARAUNI_FIELD("model.width", width),
      PARAUNI_FIELD("model.queries", queries),
      PARAUNI_FIELD("model.vocab", vocab),
      PARAUNI_FIELD("model.heads", heads),
      PARAUNI_FIELD("model.max_prompt_len", max_prompt_len),
      PARAUNI_FIELD("model.conditioning", conditioning),
      PARAUNI_FIELD("lim.depth", lim_depth),
      PARAUNI_FIELD("lim.layer_embed", lim_layer_embed),
      PARAUNI_FIELD("lim.layernorm", lim_layernorm),
      PARAUNI_FIELD("lim.out_width", cond_width),
      PARAUNI_FIELD("denoiser.rows", rows),
      PARAUNI_FIELD("denoiser.cols", cols),
      PARAUNI_FIELD("denoiser.width", denoiser_width),
      PARAUNI_FIELD("denoiser.blocks", denoiser_blocks),
      PARAUNI_FIELD("data.dir", data.dir),
      PARAUNI_FIELD("data.prompts", data.prompts),
      PARAUNI_FIELD("data.targets_per_prompt", data.targets_per_prompt),
      PARAUNI_FIELD("data.eval_targets_per_prompt", data.eval_targets_per_prompt),
      PARAUNI_FIELD("data.prompt_len", data.prompt_len),
      PARAUNI_FIELD("data.stage1_noise", data.stage1_noise),
      PARAUNI_FIELD("data.stage2_noise", data.stage2_noise),
      PARAUNI_FIELD("optim.weight_decay", weight_decay),
      PARAUNI_FIELD("stage1.epochs", stage1.epochs),
      PARAUNI_FIELD("stage1.steps_per_epoch", stage1.steps_per_epoch),
      PARAUNI_FIELD("stage1.batch", stage1.batch),
      PARAUNI_FIELD("stage1.prompts_per_batch", stage1.prompts_per_batch),
      PARAUNI_FIELD("stage1.lr", stage1.lr),
      PARAUNI_FIELD("stage1.cosine", stage1.cosine),
      PARAUNI_FIELD("stage1.checkpoint_every", stage1.checkpoint_every),
      PARAUNI_FIELD("stage2.epochs", stage2.epochs),
      PARAUNI_FIELD("stage2.steps_per_epoch", stage2.steps_per_epoch),
      PARAUNI_FIELD("stage2.batch", stage2.batch),
      PARAUNI_FIELD("stage2.prompts_per_batch", stage2.prompts_per_batch),
      PARAUNI_FIELD("stage2.lr", stage2.lr),
      PARAUNI_FIELD("stage2.cosine", stage2.cosine),
      PARAUNI_FIELD("stage2.checkpoint_every", stage2.checkpoint_every),
      PARAUNI_FIELD("stage3.rewards", stage3.rewards),
      PARAUNI_FIELD("stage3.epochs_per_reward", stage3.epochs_per_reward),
      PARAUNI_FIELD("stage3.prompts_per_epoch", stage3.prompts_per_epoch),
      PARAUNI_FIELD("stage3.checkpoint_every", stage3.checkpoint_every),
      PARAUNI_FIELD("grpo.group_size", stage3.grpo.group_size),
      PARAUNI_FIELD("grpo.clip_eps", stage3.grpo.clip_eps),
      PARAUNI_FIELD("grpo.lr", stage3.grpo.lr),
      PARAUNI_FIELD("grpo.noise_level", stage3.grpo.noise_level),
      PARAUNI_FIELD("grpo.steps", stage3.grpo.steps),
      PARAUNI_FIELD("grpo.inner_epochs", stage3.grpo.inner_epochs),
      PARAUNI_FIELD("grpo.kl_coef", stage3.grpo.kl_coef),
      PARAUNI_FIELD("ldam.enabled", stage3.ldam_enabled),
      PARAUNI_FIELD("ldam.spike_factor", stage3.ldam.spike_factor),
      PARAUNI_FIELD("ldam.threshold", stage3.ldam.threshold),
      PARAUNI_FIELD("ldam.gamma0", stage3.ldam.gamma0),
      PARAUNI_FIELD("ldam.grad_guidance", stage3.ldam.use_grad_guidance),
      PARAUNI_FIELD("ldam.reward_guidance", stage3.ldam.use_reward_guidance),
      PARAUNI_FIELD("ldam.resample_per_forward", stage3.ldam.resample_per_forward),
      PARAUNI_FIELD("eval.repeats", eval_repeats),
      PARAUNI_FIELD("sample.steps", sample_steps),
      PARAUNI_FIELD("analysis.prompts", analysis.prompts),
      PARAUNI_FIELD("analysis.samples", analysis.samples),
      PARAUNI_FIELD("analysis.steps", analysis.steps),
  };
  return table;
}

#undef PARAUNI_FIELD

}  // namespace

PipelineConfig::PipelineConfig() {
  stage2.epochs = 30;
  stage2.cosine = true;
  stage3.grpo.lr = 1e-3f;
}

BundleConfig PipelineConfig::bundle() const {
  BundleConfig b;
  b.vlm.layers = layers;
  b.vlm.width = width;
  b.vlm.queries = queries;
  b.vlm.vocab = vocab;
  b.vlm.heads = heads;
  b.vlm.max_prompt_len = max_prompt_len;
  b.lim.width = width;
  b.lim.out_width = cond_width;
  b.lim.layers = layers;
  b.lim.heads = heads;
  b.lim.depth = lim_depth;
  b.lim.layer_embed = lim_layer_embed;
  b.lim.use_layernorm = lim_layernorm;
  b.denoiser.rows = rows;
  b.denoiser.cols = cols;
  b.denoiser.width = denoiser_width;
  b.denoiser.heads = heads;
  b.denoiser.blocks = denoiser_blocks;
  b.denoiser.cond_width = cond_width;
  parse_condition_mode(conditioning, b);
  return b;
}

void PipelineConfig::validate() const {
  bundle().validate();
  if (data.prompts < 1) throw ConfigError("data.prompts must be >= 1");
  if (data.targets_per_prompt < 1) throw ConfigError("data.targets_per_prompt must be >= 1");
  if (data.eval_targets_per_prompt < 1) throw ConfigError("data.eval_targets_per_prompt must be >= 1");
  if (data.prompt_len < 1 || static_cast<std::size_t>(data.prompt_len) > max_prompt_len)
    throw ConfigError("data.prompt_len must be in 1..model.max_prompt_len");
  if (!(data.stage1_noise >= 0.0f) || !(data.stage2_noise >= 0.0f)) throw ConfigError("data noise must be >= 0");
  if (!(weight_decay >= 0.0f)) throw ConfigError("optim.weight_decay must be >= 0");
  for (const LoopConfig* s : {&stage1, &stage2}) {
    if (s->epochs < 1 || s->steps_per_epoch < 1 || s->batch < 1 || s->prompts_per_batch < 1)
      throw ConfigError("stage loops need positive sizes");
    if (!(s->lr > 0.0f)) throw ConfigError("stage learning rates must be > 0");
    if (s->checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  }
  if (stage3.rewards.empty()) throw ConfigError("stage3.rewards is empty");
  if (stage3.epochs_per_reward < 1 || stage3.prompts_per_epoch < 1) throw ConfigError("stage3 sizes must be >= 1");
  if (stage3.checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  stage3.grpo.validate();
  stage3.ldam.validate();
  if (stage3.ldam_enabled)
    for (RewardKind k : stage3.rewards) {
      try {
        select_layers(k, layers, stage3.ldam);
      } catch (const EmptyError& e) {
        throw ConfigError(e.what());
      }
    }
  if (eval_repeats < 1 || sample_steps < 1) throw ConfigError("eval.repeats and sample.steps must be >= 1");
  if (analysis.prompts < 1 || analysis.samples < 1 || analysis.steps < 1) throw ConfigError("analysis sizes must be >= 1");
}

PipelineConfig PipelineConfig::from_text(const std::string& text) {
  PipelineConfig c;
  auto entries = parse_key_values(text);
  for (const auto& f : fields()) {
    if (auto it = entries.find(f.key); it != entries.end()) {
      f.set(c, it->second);
      entries.erase(it);
    }
  }
  if (!entries.empty()) throw ConfigError("unknown config key '" + entries.begin()->first + "'");
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) { return from_text(binio::read_file(path)); }

std::string PipelineConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

void apply_env_overrides(PipelineConfig& config) {
  if (const char* s = std::getenv("PARAUNI_SEED"); s && *s) parse_number("PARAUNI_SEED", std::string(s), config.seed);
}

}  // namespace parauni
