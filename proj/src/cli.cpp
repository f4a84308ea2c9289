#include "parauni/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "parauni/analysis.hpp"
#include "parauni/binio.hpp"
#include "parauni/checkpoint.hpp"
#include "parauni/config.hpp"
#include "parauni/dataset.hpp"
#include "parauni/errors.hpp"
#include "parauni/svg.hpp"
#include "parauni/train.hpp"

namespace parauni::cli {

namespace {

PipelineConfig load_config(const std::string& path) {
  PipelineConfig c = path.empty() ? PipelineConfig{} : PipelineConfig::from_file(path);
  apply_env_overrides(c);
  c.validate();
  return c;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
}

void write_text(const std::string& path, const std::string& text) { binio::write_file(path, text); }

void gen_data(const std::string& config_path, std::ostream& out) {
  const auto c = load_config(config_path);
  const auto ds = make_dataset(c);
  const auto m = write_dataset(ds, c.data.dir);
  write_text(c.data.dir + "/config.resolved", c.to_text());
  out << "wrote " << m.prompts << " prompts (" << m.stage1_targets << " stage-1, " << m.stage2_targets
      << " stage-2, " << m.eval_targets << " eval targets) to " << c.data.dir << ", checksum " << m.checksum << "\n";
}

void train(int stage, const std::string& config_path, const std::string& resume, int stop_after, std::ostream& out) {
  if (stage < 1 || stage > 3) throw ConfigError("--stage must be 1, 2 or 3");
  const auto c = load_config(config_path);
  std::optional<TrainingState> state;
  if (resume.empty()) {
    if (stage != 1) throw ConfigError("stage " + std::to_string(stage) + " needs --resume with the previous stage's checkpoint");
    state.emplace(TrainingState::fresh(c, 1));
  } else {
    TrainingState prev = load_checkpoint(resume);
    if (prev.stage == stage && !prev.complete) {
      if (prev.config.to_text() != c.to_text())
        throw ConfigError("config differs from the one stored in '" + resume + "'");
      state.emplace(std::move(prev));
    } else if (prev.stage == stage - 1 && prev.complete) {
      state.emplace(TrainingState::next_stage(c, stage, prev));
    } else {
      throw ConfigError("checkpoint '" + resume + "' holds stage " + std::to_string(prev.stage) +
                        (prev.complete ? " (complete)" : " (in progress)") + "; cannot start stage " +
                        std::to_string(stage));
    }
  }
  const auto data = read_dataset(c.data.dir);
  ensure_dir(c.out_dir);
  write_text(c.out_dir + "/stage" + std::to_string(stage) + ".resolved", c.to_text());
  RunOptions opts;
  opts.stop_after = stop_after;
  opts.on_epoch = [&](const EpochRecord& r, TrainingState&) {
    out << "stage " << r.stage << (r.reward == "-" ? "" : " " + r.reward) << " epoch " << r.epoch;
    if (!std::isnan(r.loss) && r.stage < 3) out << " loss " << r.loss;
    if (!std::isnan(r.reward_value)) out << " reward " << r.reward_value;
    out << " grad_norm " << r.grad_norm;
    if (r.ldam == "perturb") out << " ldam perturb gamma " << r.gamma;
    out << "\n";
  };
  run_stage(*state, data, opts);
  if (state->complete) {
    if (stage == 2)
      out << "eval fm_loss " << stage2_eval_loss(c, state->bundle, data)
          << "\n";
    out << "stage " << stage << " complete: " << checkpoint_path(c, stage) << "\n";
  } else {
    const std::string path = checkpoint_path(c, stage, -1) + ".partial";
    save_checkpoint(*state, path);
    out << "stage " << stage << " stopped; resume from " << path << "\n";
  }
}

void sample(const std::string& ckpt, int prompt, const std::string& mode, int steps, std::uint64_t seed,
            const std::string& out_path, std::ostream& out) {
  const auto state = load_checkpoint(ckpt);
  const auto ds = make_dataset(state.config);
  const auto& p = ds.prompt(prompt);
  NoGradGuard no_grad;
  const Condition c = state.bundle.condition(p.tokens, effective_masks(state, seed));
  Tensor x;
  if (mode == "ode")
    x = sample_ode(state.bundle.denoiser, c, steps, seed, state.bundle.sample_shape());
  else
    x = sample_sde(state.bundle.denoiser, c, steps, state.config.stage3.grpo.noise_level, seed,
                   state.bundle.sample_shape())
            .states.back();
  std::ostringstream csv;
  csv.precision(9);
  const std::size_t cols = x.dim(1);
  for (std::size_t r = 0; r < x.dim(0); ++r)
    for (std::size_t j = 0; j < cols; ++j) csv << x[r * cols + j] << (j + 1 == cols ? "\n" : ",");
  if (out_path.empty())
    out << csv.str();
  else
    write_text(out_path, csv.str());
  out << "alignment " << alignment_reward(x, prompt) << " quality " << quality_reward(x) << " preference "
      << preference_reward(x, prompt) << "\n";
}

void analyze(const std::string& kind, const std::string& ckpt, const std::string& dir, const std::string& reward,
             std::ostream& out) {
  const auto state = load_checkpoint(ckpt);
  const auto& c = state.config;
  const auto ds = make_dataset(c);
  const std::size_t n = std::min<std::size_t>(ds.prompts.size(), static_cast<std::size_t>(c.analysis.prompts));
  const std::vector<Prompt> prompts(ds.prompts.begin(), ds.prompts.begin() + static_cast<long>(n));
  const SamplingSpec spec{c.analysis.steps, c.analysis.samples, derive_seed(c.seed, {0x616e61})};
  ensure_dir(dir);
  write_text(dir + "/analyze_" + kind + ".resolved", c.to_text());
  std::ostringstream csv;
  if (kind == "sweep") {
    const auto scorer = ScorerRegistry::global().make(reward);
    const auto r = single_layer_sweep(state.bundle, prompts, *scorer, spec);
    write_sweep_csv(csv, r);
    write_text(dir + "/sweep.csv", csv.str());
    const auto best = std::max_element(r.scores.begin(), r.scores.end()) - r.scores.begin();
    out << "sweep (" << reward << "): best layer " << best + 1 << " score " << r.scores[static_cast<std::size_t>(best)]
        << "; first " << r.scores.front() << ", last " << r.scores.back() << "\n";
  } else if (kind == "similarity") {
    const auto s = mean_similarity(state.bundle, prompts);
    write_similarity_csv(csv, s);
    write_text(dir + "/similarity.csv", csv.str());
    out << "similarity: adjacent mean " << mean_adjacent_similarity(s) << ", off-diagonal mean "
        << mean_off_diagonal_similarity(s) << (s.zero_norm ? " (zero-norm layers present)" : "") << "\n";
  } else {
    const auto regions = default_regions(c.layers);
    const RewardKind kinds[] = {RewardKind::Alignment, RewardKind::Quality, RewardKind::Preference};
    const auto r = region_ablation(state.bundle, regions, kinds, prompts, spec);
    write_ablation_csv(csv, r);
    write_text(dir + "/ablation.csv", csv.str());
    for (const auto& row : r.rows)
      out << "ablation " << row.region << " " << reward_name(row.kind) << " delta " << row.delta << "\n";
  }
}

void plot(const std::string& in, const std::string& out_path, std::ostream& out) {
  const std::string svg = svg::plot_csv(binio::read_file(in), std::filesystem::path(in).filename().string());
  write_text(out_path, svg);
  out << "wrote " << out_path << "\n";
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Layer-integrated VLM conditioning with flow-matching diffusion, GRPO and LDAM at desk scale"};
  app.require_subcommand(1);

  std::string config_path, resume, checkpoint, out_dir, in_path, out_path, mode = "ode", kind, reward = "alignment";
  int stage = 0, stop_after = -1, prompt = 0, steps = 10;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset");
  gen->add_option("--config", config_path, "config file")->check(CLI::ExistingFile);

  auto* tr = app.add_subcommand("train", "run one training stage");
  tr->add_option("--stage", stage, "1, 2 or 3")->required();
  tr->add_option("--config", config_path, "config file")->required();
  tr->add_option("--resume", resume, "checkpoint of the previous stage, or a partial one of this stage");
  tr->add_option("--stop-after", stop_after, "stop after this many epochs and write a partial checkpoint");

  auto* sm = app.add_subcommand("sample", "draw one sample from a checkpoint");
  sm->add_option("--checkpoint", checkpoint)->required();
  sm->add_option("--prompt", prompt)->required();
  sm->add_option("--mode", mode)->check(CLI::IsMember({"ode", "sde"}));
  sm->add_option("--steps", steps)->check(CLI::PositiveNumber);
  sm->add_option("--seed", seed);
  sm->add_option("--out", out_path, "CSV destination (stdout when absent)");

  auto* an = app.add_subcommand("analyze", "layer analysis reports");
  an->add_option("kind", kind)->required()->check(CLI::IsMember({"sweep", "similarity", "ablation"}));
  an->add_option("--checkpoint", checkpoint)->required();
  an->add_option("--out", out_dir)->required();
  an->add_option("--reward", reward, "scorer for the sweep");

  auto* pl = app.add_subcommand("plot", "render a report CSV as SVG");
  pl->add_option("--in", in_path)->required()->check(CLI::ExistingFile);
  pl->add_option("--out", out_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitConfig;
  }

  try {
    if (gen->parsed())
      gen_data(config_path, out);
    else if (tr->parsed())
      train(stage, config_path, resume, stop_after, out);
    else if (sm->parsed())
      sample(checkpoint, prompt, mode, steps, seed, out_path, out);
    else if (an->parsed())
      analyze(kind, checkpoint, out_dir, reward, out);
    else if (pl->parsed())
      plot(in_path, out_path, out);
    return kExitOk;
  } catch (const InvariantError& e) {
    err << "invariant violated: " << e.what() << "\n";
    return kExitInvariant;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace parauni::cli
