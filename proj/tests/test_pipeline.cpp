#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "parauni/binio.hpp"
#include "parauni/checkpoint.hpp"
#include "parauni/config.hpp"
#include "parauni/dataset.hpp"
#include "parauni/errors.hpp"
#include "parauni/svg.hpp"
#include "parauni/train.hpp"
#include "support/pipeline.hpp"

using namespace parauni;
using testing::scratch_dir;
using testing::tiny_pipeline;
using testing::tiny_pipeline_text;

namespace {

std::vector<std::vector<float>> values(const nn::ParamList& params) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  return out;
}

std::size_t count(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

RunOptions quiet() {
  RunOptions o;
  o.write_files = false;
  return o;
}

TrainingState trained_to(const PipelineConfig& c, const SyntheticDataset& ds, int stage) {
  TrainingState s = TrainingState::fresh(c, 1);
  for (int k = 2; k <= stage; ++k) {
    run_stage(s, ds, quiet());
    s = TrainingState::next_stage(c, k, s);
  }
  return s;
}

}  // namespace

TEST_CASE("key-value parsing") {
  const auto kv = parse_key_values("# comment\n a.b = 1 \n\nc.d=x y # trailing\n");
  CHECK(kv.size() == 2);
  CHECK(kv.at("a.b") == "1");
  CHECK(kv.at("c.d") == "x y");
  try {
    parse_key_values("a = 1\nbroken line\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_key_values("a = 1\na = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values(" = 2\n"), ConfigError);
}

TEST_CASE("pipeline config resolution") {
  const PipelineConfig d;
  CHECK_NOTHROW(d.validate());
  CHECK(d.stage3.rewards ==
        std::vector<RewardKind>{RewardKind::Quality, RewardKind::Preference, RewardKind::Alignment});
  CHECK(d.weight_decay == 0.05f);
  // round trip through the resolved text
  const auto c = tiny_pipeline("/tmp/x");
  CHECK(PipelineConfig::from_text(c.to_text()).to_text() == c.to_text());
  CHECK(c.layers == 4);
  CHECK(c.stage3.rewards == std::vector<RewardKind>{RewardKind::Quality, RewardKind::Alignment});
  CHECK(c.bundle().lim.layers == 4);

  CHECK_THROWS_AS(PipelineConfig::from_text("model.layrs = 3\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_text("model.layers = three\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_text("stage3.rewards = clip\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_text("grpo.group_size = 1\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_text("lim.out_width = 16\ndenoiser.width = 32\nmodel.conditioning = nope\n"),
                  ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_text("data.prompt_len = 9\n"), ConfigError);
  // the reward bands must exist at this depth
  CHECK_THROWS_AS(PipelineConfig::from_text(tiny_pipeline_text("x") + "model.layers = 1\n"), ConfigError);

  PipelineConfig e = c;
  ::setenv("PARAUNI_SEED", "1234", 1);
  apply_env_overrides(e);
  CHECK(e.seed == 1234);
  ::setenv("PARAUNI_SEED", "12x", 1);
  CHECK_THROWS_AS(apply_env_overrides(e), ConfigError);
  ::unsetenv("PARAUNI_SEED");
}

TEST_CASE("synthetic dataset") {
  const auto c = tiny_pipeline();
  const auto a = make_dataset(c), b = make_dataset(c);
  CHECK(binio::fnv1a(encode_dataset(a)) == binio::fnv1a(encode_dataset(b)));
  PipelineConfig other = c;
  other.seed = 6;
  CHECK(encode_dataset(make_dataset(other)) != encode_dataset(a));

  REQUIRE(a.prompts.size() == 4);
  for (std::size_t p = 0; p < 4; ++p) {
    CHECK(a.stage1[p].size() == 3);
    CHECK(a.stage2[p].size() == 3);
    CHECK(a.eval[p].size() == 2);
    CHECK(a.prompts[p].tokens.size() == 3);
    for (int t : a.prompts[p].tokens) CHECK((t >= 0 && t < 16));
  }
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t q = p + 1; q < 4; ++q) {
      bool differ = false;
      for (std::size_t i = 0; i < a.patterns[p].numel(); ++i) differ |= a.patterns[p][i] != a.patterns[q][i];
      CHECK(differ);
    }
  DataConfig empty = c.data;
  empty.prompts = 0;
  CHECK_THROWS_AS(make_dataset(empty, 16, 2, 3, 1), EmptyError);
  CHECK_THROWS_AS(a.prompt(4), IndexError);
}

TEST_CASE("dataset files") {
  const auto dir = scratch_dir("data");
  const auto ds = make_dataset(tiny_pipeline());
  const auto m = write_dataset(ds, dir + "/d");
  CHECK(m.prompts == 4);
  CHECK(m.stage1_targets == 12);
  const auto again = read_dataset(dir + "/d");
  CHECK(encode_dataset(again) == encode_dataset(ds));
  CHECK(read_manifest(dir + "/d").checksum == m.checksum);
  CHECK(write_dataset(ds, dir + "/e").checksum == m.checksum);

  // flip one byte of the payload
  std::string bytes = binio::read_file(dir + "/d/dataset.bin");
  bytes[bytes.size() / 2] ^= 0x40;
  binio::write_file(dir + "/d/dataset.bin", bytes);
  CHECK_THROWS_AS(read_dataset(dir + "/d"), FormatError);
  CHECK_THROWS_AS(read_dataset(dir + "/missing"), IoError);

  std::ofstream(dir + "/file") << "x";
  CHECK_THROWS_AS(write_dataset(ds, dir + "/file/sub"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("stage trainable sets") {
  CHECK(stage_trainable(1) == std::vector<ParamGroup>{ParamGroup::Queries, ParamGroup::Lim});
  CHECK(stage_trainable(2) == std::vector<ParamGroup>{ParamGroup::Queries, ParamGroup::Lim, ParamGroup::Diffusion});
  CHECK(stage_trainable(3) == stage_trainable(2));
  CHECK_THROWS_AS(stage_trainable(4), ConfigError);
}

TEST_CASE("stage I trains only the queries and the LIM") {
  const auto c = tiny_pipeline();
  const auto ds = make_dataset(c);
  auto s = TrainingState::fresh(c, 1);
  const auto vlm0 = values(s.bundle.group(ParamGroup::Vlm));
  const auto den0 = values(s.bundle.group(ParamGroup::Diffusion));
  const auto q0 = values(s.bundle.group(ParamGroup::Queries));
  const auto lim0 = values(s.bundle.group(ParamGroup::Lim));
  RunOptions o = quiet();
  int epochs = 0;
  o.on_epoch = [&](const EpochRecord& r, TrainingState& st) {
    ++epochs;
    CHECK(std::isfinite(r.loss));
    for (const auto& p : st.bundle.group(ParamGroup::Vlm)) CHECK_FALSE(p.tensor.has_grad());
    for (const auto& p : st.bundle.group(ParamGroup::Diffusion)) CHECK_FALSE(p.tensor.has_grad());
  };
  const auto records = run_stage(s, ds, o);
  CHECK(epochs == 3);
  CHECK(records.size() == 3);
  CHECK(s.complete);
  CHECK(values(s.bundle.group(ParamGroup::Vlm)) == vlm0);
  CHECK(values(s.bundle.group(ParamGroup::Diffusion)) == den0);
  CHECK(values(s.bundle.group(ParamGroup::Queries)) != q0);
  CHECK(values(s.bundle.group(ParamGroup::Lim)) != lim0);
  CHECK_THROWS_AS(run_stage(s, ds, o), ConfigError);
}

TEST_CASE("a gradient on a frozen group aborts the stage") {
  const auto c = tiny_pipeline();
  const auto ds = make_dataset(c);
  auto s = TrainingState::fresh(c, 1);
  RunOptions o = quiet();
  o.on_epoch = [](const EpochRecord&, TrainingState& st) {
    nn::set_trainable(st.bundle.group(ParamGroup::Vlm), true);
  };
  CHECK_THROWS_AS(run_stage(s, ds, o), InvariantError);
  CHECK_THROWS_AS(check_frozen(s.bundle, stage_trainable(1)), InvariantError);
}

TEST_CASE("stage II lowers the held-out loss") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto c = tiny_pipeline();
    c.seed = seed;
    c.stage2.epochs = 8;
    c.stage2.lr = 3e-3f;
    const auto ds = make_dataset(c);
    auto s = trained_to(c, ds, 2);
    const double before = eval_fm_loss(s.bundle, ds, 4, 99);
    run_stage(s, ds, quiet());
    const double after = eval_fm_loss(s.bundle, ds, 4, 99);
    INFO("seed " << seed << ": " << before << " -> " << after);
    CHECK(after < before);
  }
}

TEST_CASE("stage III with one reward and no controller is plain GRPO") {
  auto c = tiny_pipeline();
  c.stage3.rewards = {RewardKind::Alignment};
  c.stage3.ldam_enabled = false;
  const auto ds = make_dataset(c);
  auto s = trained_to(c, ds, 3);
  auto ref = TrainingState::next_stage(c, 3, s);  // same weights, separate tensors
  const auto records = run_stage(s, ds, quiet());
  REQUIRE(records.size() == 3);

  // The loop written out by hand.
  ref.bundle.set_trainable(stage_trainable(3));
  nn::ParamList params;
  for (ParamGroup g : stage_trainable(3)) {
    auto p = ref.bundle.group(g);
    params.insert(params.end(), p.begin(), p.end());
  }
  AdamW opt({c.stage3.grpo.lr, 0.9f, 0.999f, 1e-8f, c.weight_decay});
  ToyScorer scorer(RewardKind::Alignment);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::vector<RolloutGroup> groups;
    double sum = 0;
    for (int id = 0; id < 2; ++id) {
      NoGradGuard ng;
      const Condition cond = ref.bundle.condition(ds.prompt(id).tokens);
      groups.push_back(rollout_group(ref.bundle.denoiser, cond, id, scorer, c.stage3.grpo, rollout_seed(c, 0, epoch, id),
                                     ref.bundle.sample_shape()));
      for (double r : groups.back().rewards) sum += r;
    }
    const ConditionFn fn = [&](int id) { return ref.bundle.condition(ds.prompt(id).tokens); };
    nn::clear_grads(ref.bundle.all_params());
    const auto report = policy_update(ref.bundle.denoiser, fn, groups, c.stage3.grpo, opt, params);
    CHECK(records[epoch].reward_value == sum / 8.0);
    CHECK(records[epoch].grad_norm == report.grad_norm);
    CHECK(records[epoch].ldam == "-");
  }
  CHECK(values(s.bundle.all_params()) == values(ref.bundle.all_params()));
  CHECK(s.ldam.active_masks.empty());
  CHECK(s.carried.empty());
}

TEST_CASE("stage III rewards run in order and carry masks") {
  auto c = tiny_pipeline();
  // fire on every epoch the cooldown allows
  c.stage3.ldam.use_grad_guidance = false;
  c.stage3.ldam.use_reward_guidance = false;
  const auto ds = make_dataset(c);
  auto s = trained_to(c, ds, 3);
  std::vector<LayerMaskSet> carried_at_switch;
  RunOptions o = quiet();
  const auto records = run_stage(s, ds, o);
  REQUIRE(records.size() == 6);
  for (int i = 0; i < 3; ++i) CHECK(records[i].reward == "quality");
  for (int i = 3; i < 6; ++i) CHECK(records[i].reward == "alignment");
  CHECK(records[0].ldam == "perturb");
  CHECK(records[3].ldam == "perturb");
  // quality band {2, 3} then alignment band {4} at L = 4
  CHECK(s.carried.size() == 3);
  CHECK(s.carried.find(2) != nullptr);
  CHECK(s.carried.find(4) != nullptr);
  for (const auto& [layer, m] : s.carried.entries()) CHECK(m.shape() == Shape{4, 8});
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = scratch_dir("ckpt");
  auto c = tiny_pipeline(dir);
  c.stage3.ldam.use_grad_guidance = false;
  c.stage3.ldam.use_reward_guidance = false;
  const auto ds = make_dataset(c);
  auto s = trained_to(c, ds, 3);
  RunOptions o = quiet();
  o.stop_after = 4;  // into the second reward, with masks installed
  run_stage(s, ds, o);
  REQUIRE(s.reward_index == 1);
  REQUIRE_FALSE(s.carried.empty());
  s.rng.normal();  // leave a cached normal in the state

  save_checkpoint(s, dir + "/a.ckpt");
  const auto t = load_checkpoint(dir + "/a.ckpt");
  CHECK(encode_checkpoint(t) == encode_checkpoint(s));
  CHECK(values(t.bundle.all_params()) == values(s.bundle.all_params()));
  CHECK(t.optimizer.steps() == s.optimizer.steps());
  CHECK(t.rng == s.rng);
  CHECK(t.ldam.n_cool == s.ldam.n_cool);
  CHECK(t.ldam.events == s.ldam.events);
  CHECK(t.stage == 3);
  CHECK(t.next_epoch == s.next_epoch);
  CHECK(t.carried.size() == s.carried.size());
  std::filesystem::remove_all(dir);
}

TEST_CASE("corrupt checkpoints are rejected without side effects") {
  const auto dir = scratch_dir("corrupt");
  const auto c = tiny_pipeline(dir);
  const auto ds = make_dataset(c);
  auto s = TrainingState::fresh(c, 1);
  RunOptions o = quiet();
  o.stop_after = 1;
  run_stage(s, ds, o);
  const std::string bytes = encode_checkpoint(s);

  auto target = TrainingState::fresh(c, 1);
  const auto before = values(target.bundle.all_params());
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{6}, std::size_t{40}, bytes.size() / 3,
                          bytes.size() / 2, bytes.size() - 5, bytes.size() - 1}) {
    binio::write_file(dir + "/t.ckpt", bytes.substr(0, cut));
    CHECK_THROWS_AS(restore_checkpoint(target, dir + "/t.ckpt"), FormatError);
    CHECK(values(target.bundle.all_params()) == before);
    CHECK(target.next_epoch == 0);
  }
  try {
    decode_checkpoint(bytes.substr(0, bytes.size() - 1));
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(e.offset() > 0);
    CHECK(e.offset() < bytes.size());
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  std::string wrong_version = bytes;
  wrong_version[4] = 2;
  CHECK_THROWS_AS(decode_checkpoint(wrong_version), FormatError);
  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(wrong_magic), FormatError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), FormatError);
  CHECK_THROWS_AS(load_checkpoint(dir + "/absent.ckpt"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("resumed training matches the continuous run") {
  const auto dir = scratch_dir("resume");
  auto c = tiny_pipeline(dir);
  c.stage3.ldam.use_grad_guidance = false;
  const auto ds = make_dataset(c);
  for (int stage = 1; stage <= 3; ++stage) {
    auto continuous = trained_to(c, ds, stage);
    auto interrupted = trained_to(c, ds, stage);
    const auto full = run_stage(continuous, ds, quiet());
    for (int k = 1; k < static_cast<int>(full.size()); ++k) {
      auto part = trained_to(c, ds, stage);
      RunOptions o = quiet();
      o.stop_after = k;
      run_stage(part, ds, o);
      save_checkpoint(part, dir + "/p.ckpt");
      auto resumed = load_checkpoint(dir + "/p.ckpt");
      o.stop_after = 1;
      const auto next = run_stage(resumed, ds, o);
      REQUIRE(next.size() == 1);
      INFO("stage " << stage << " resume after " << k);
      CHECK(next[0] == full[static_cast<std::size_t>(k)]);
    }
    run_stage(interrupted, ds, quiet());
    CHECK(values(interrupted.bundle.all_params()) == values(continuous.bundle.all_params()));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("metrics log is append-only across a resume") {
  const auto dir = scratch_dir("metrics");
  auto c = tiny_pipeline(dir);
  c.stage1.checkpoint_every = 1;
  const auto ds = make_dataset(c);
  auto s = TrainingState::fresh(c, 1);
  RunOptions o;
  o.stop_after = 2;
  run_stage(s, ds, o);
  CHECK(std::filesystem::exists(checkpoint_path(c, 1, 1)));
  CHECK(std::filesystem::exists(checkpoint_path(c, 1, 2)));
  auto resumed = load_checkpoint(checkpoint_path(c, 1, 2));
  run_stage(resumed, ds, {});
  CHECK(std::filesystem::exists(checkpoint_path(c, 1)));
  const std::string log = binio::read_file(dir + "/metrics.csv");
  CHECK(count(log, "stage,reward,epoch") == 1);
  CHECK(count(log, "\n") == 4);
  CHECK(log.find("\n1,-,3,") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("next stage needs a compatible model") {
  const auto c = tiny_pipeline();
  auto s = TrainingState::fresh(c, 1);
  auto bigger = c;
  bigger.width = 16;
  bigger.cond_width = 16;
  CHECK_THROWS_AS(TrainingState::next_stage(bigger, 2, s), ConfigError);
}

TEST_CASE("svg charts") {
  std::string sweep = "layer,score\n";
  for (int i = 1; i <= 7; ++i) sweep += std::to_string(i) + "," + std::to_string(0.1 * i) + "\n";
  const auto svg1 = svg::plot_csv(sweep, "sweep");
  CHECK(count(svg1, "<polyline") == 1);
  const auto pts = svg1.substr(svg1.find("points=\"") + 8);
  CHECK(count(pts.substr(0, pts.find('"')), ",") == 7);

  std::string sim = "i,j,value\n";
  for (int i = 1; i <= 3; ++i)
    for (int j = 1; j <= 3; ++j) sim += std::to_string(i) + "," + std::to_string(j) + "," + (i == j ? "1" : "0.5") + "\n";
  CHECK(count(svg::plot_csv(sim, "sim"), "<rect x=") == 9);

  const auto metrics = svg::plot_csv("stage,reward,epoch,loss,reward_value\n3,quality,1,,0.5\n3,quality,2,,0.6\n", "m");
  CHECK(count(metrics, "<polyline") == 1);
  CHECK_THROWS_AS(svg::parse_csv("a,b\n1\n"), FormatError);
  CHECK_THROWS_AS(svg::plot_csv("a,b\nx,y\n", "t"), FormatError);
  CHECK(svg::line_chart({}, "<&>").find("&lt;&amp;&gt;") != std::string::npos);
}
