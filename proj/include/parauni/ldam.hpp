#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "parauni/lim.hpp"
#include "parauni/rewards.hpp"

namespace parauni {

struct LdamConfig {
  double spike_factor = 1e2;
  int threshold = 5;  // stagnation count r_s that arms the trigger
  double gamma0 = 0.1;
  bool use_grad_guidance = true;    // false: the spike condition always holds
  bool use_reward_guidance = true;  // false: the stagnation condition always holds
  bool resample_per_forward = false;
  // 1-based layer bands on the 28-layer reference model; rescaled for other L.
  int alignment_lo = 24, alignment_hi = 28;
  int quality_lo = 12, quality_hi = 23;
  int reference_layers = 28;

  void validate() const;
};

struct MaskShape {
  std::size_t rows = 0, cols = 0;
};

struct LdamState {
  double g_prev = std::numeric_limits<double>::infinity();
  double r_prev = 0.0;
  std::int64_t n_cool = 0;
  std::int64_t r_s = 0;
  bool g_s = false;
  std::int64_t epoch = 0;  // index n of the last observe call
  LayerMaskSet active_masks;
  std::int64_t events = 0;
  std::uint64_t mask_seed = 0;  // seed of the last installed masks
  double last_gamma = 0.0;
  std::set<std::size_t> last_layers;
  MaskShape mask_shape;
};

struct LdamDecision {
  bool perturb = false;
  std::set<std::size_t> layers;
  double gamma = 0.0;
};

// Layers of the band for `kind` on an L-layer model: ⌈lo·L/ref⌉..⌊hi·L/ref⌋.
// Throws EmptyError for an empty band.
std::set<std::size_t> select_layers(RewardKind kind, std::size_t layers, const LdamConfig& config = {});

// γ0·min(1, log10(g/g_prev)/2 · r_s/threshold) clamped to [0, γ0]; γ0 when
// g_prev is infinite. Throws DomainError for negative inputs.
double gamma_schedule(double g, double g_prev, std::int64_t r_s, const LdamConfig& config);

// One controller step. Masks M_i = 1 + γ·ε, ε ~ N(0, I) from `seed`, are
// installed for every selected layer when the trigger fires.
LdamDecision observe(LdamState& state, double g, double r, RewardKind kind, std::size_t layers,
                     const MaskShape& shape, const LdamConfig& config, std::uint64_t seed);

// Masks drawn for one event; identical draws for identical arguments.
LayerMaskSet draw_masks(const std::set<std::size_t>& layers, double gamma, const MaskShape& shape,
                        std::uint64_t seed);

// Masks for the next integrate call. With resample_per_forward set, fresh
// noise is drawn for the event's layers and γ using `forward_seed`.
LayerMaskSet apply_masks(const LdamState& state, const LdamConfig& config = {}, std::uint64_t forward_seed = 0);

// Append-only event log: epoch,g,r,r_s,g_s,n_cool,decision,gamma
void write_event_header(std::ostream& out);
void write_event(std::ostream& out, const LdamState& after, double g, double r, const LdamDecision& decision);

}  // namespace parauni
