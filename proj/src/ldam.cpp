#include "parauni/ldam.hpp"

#include <algorithm>
#include <cmath>

#include "parauni/errors.hpp"
#include "parauni/rng.hpp"

namespace parauni {

void LdamConfig::validate() const {
  if (!(spike_factor > 1.0)) throw ConfigError("ldam.spike_factor must be > 1");
  if (threshold < 1) throw ConfigError("ldam.threshold must be >= 1");
  if (!(gamma0 >= 0.0)) throw ConfigError("ldam.gamma0 must be >= 0");
  if (reference_layers < 1) throw ConfigError("ldam.reference_layers must be >= 1");
  if (alignment_lo < 1 || alignment_hi < alignment_lo || quality_lo < 1 || quality_hi < quality_lo)
    throw ConfigError("ldam layer bands must satisfy 1 <= lo <= hi");
}

std::set<std::size_t> select_layers(RewardKind kind, std::size_t layers, const LdamConfig& config) {
  if (layers < 1) throw DomainError("select_layers: L must be >= 1");
  const bool deep = kind == RewardKind::Alignment;
  const std::size_t lo = static_cast<std::size_t>(deep ? config.alignment_lo : config.quality_lo);
  const std::size_t hi = static_cast<std::size_t>(deep ? config.alignment_hi : config.quality_hi);
  const std::size_t ref = static_cast<std::size_t>(config.reference_layers);
  const std::size_t first = std::max<std::size_t>(1, (lo * layers + ref - 1) / ref);
  const std::size_t last = std::min(layers, hi * layers / ref);
  if (first > last)
    throw EmptyError(std::string("layer band for ") + reward_name(kind) + " is empty at L = " + std::to_string(layers));
  std::set<std::size_t> out;
  for (std::size_t i = first; i <= last; ++i) out.insert(i);
  return out;
}

namespace {

double gamma_from(double growth, double stagnation, const LdamConfig& config) {
  return config.gamma0 * std::clamp(std::min(1.0, growth * stagnation), 0.0, 1.0);
}

}  // namespace

double gamma_schedule(double g, double g_prev, std::int64_t r_s, const LdamConfig& config) {
  if (g < 0.0 || g_prev < 0.0 || r_s < 0) throw DomainError("gamma_schedule: negative input");
  if (std::isinf(g_prev)) return config.gamma0;
  if (r_s == 0 || g == 0.0) return 0.0;
  const double growth = g_prev == 0.0 ? 1.0 : std::log10(g / g_prev) / 2.0;
  return gamma_from(growth, static_cast<double>(r_s) / config.threshold, config);
}

LayerMaskSet draw_masks(const std::set<std::size_t>& layers, double gamma, const MaskShape& shape,
                        std::uint64_t seed) {
  LayerMaskSet masks;
  for (std::size_t layer : layers) {
    Rng rng(derive_seed(seed, {layer}));
    std::vector<float> m(shape.rows * shape.cols);
    for (float& v : m) v = static_cast<float>(1.0 + gamma * rng.normal());
    masks.set(layer, Tensor::from_data({shape.rows, shape.cols}, std::move(m)));
  }
  return masks;
}

LdamDecision observe(LdamState& state, double g, double r, RewardKind kind, std::size_t layers,
                     const MaskShape& shape, const LdamConfig& config, std::uint64_t seed) {
  const std::int64_t n = ++state.epoch;
  if (g >= state.g_prev * config.spike_factor) state.g_s = true;
  if (r <= state.r_prev) ++state.r_s;

  LdamDecision decision;
  if (state.n_cool == 0) {
    const bool grad_ok = !config.use_grad_guidance || state.g_s;
    const bool reward_ok = !config.use_reward_guidance || state.r_s >= config.threshold;
    if (grad_ok && reward_ok) {
      // A disabled guidance signal contributes a saturated factor.
      const bool grad_factor = config.use_grad_guidance && !std::isinf(state.g_prev);
      double gamma = config.gamma0;
      if (grad_factor || config.use_reward_guidance) {
        if (config.use_grad_guidance) {
          gamma = gamma_schedule(g, state.g_prev, config.use_reward_guidance ? state.r_s : config.threshold, config);
        } else {
          gamma = gamma_from(1.0, static_cast<double>(state.r_s) / config.threshold, config);
        }
      }
      decision.perturb = true;
      decision.layers = select_layers(kind, layers, config);
      decision.gamma = gamma;
      state.active_masks = draw_masks(decision.layers, decision.gamma, shape, seed);
      state.mask_seed = seed;
      state.last_gamma = decision.gamma;
      state.last_layers = decision.layers;
      state.mask_shape = shape;
      ++state.events;
      state.r_s = 0;
      state.g_s = false;
      state.n_cool = n;
    }
  } else {
    --state.n_cool;
  }
  state.g_prev = g;
  state.r_prev = r;
  return decision;
}

LayerMaskSet apply_masks(const LdamState& state, const LdamConfig& config, std::uint64_t forward_seed) {
  if (!config.resample_per_forward || state.events == 0) return state.active_masks;
  return draw_masks(state.last_layers, state.last_gamma, state.mask_shape, forward_seed);
}

void write_event_header(std::ostream& out) { out << "epoch,g,r,r_s,g_s,n_cool,decision,gamma\n"; }

void write_event(std::ostream& out, const LdamState& after, double g, double r, const LdamDecision& decision) {
  out << after.epoch << ',' << g << ',' << r << ',' << after.r_s << ',' << (after.g_s ? 1 : 0) << ',' << after.n_cool
      << ',' << (decision.perturb ? "perturb" : "none") << ',' << decision.gamma << '\n';
}

}  // namespace parauni
