#pragma once

#include <cstdint>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "parauni/bundle.hpp"
#include "parauni/prompt.hpp"
#include "parauni/rewards.hpp"

namespace parauni {

// ODE sampling used by the sweep and the ablation. Sample s of prompt p
// starts from derive_seed(seed, {p, s}) in every run, so runs differ only in
// their conditioning.
struct SamplingSpec {
  int steps = 20;
  int samples_per_prompt = 2;
  std::uint64_t seed = 0;
};

struct SweepReport {
  std::string scorer;
  std::size_t prompts = 0;
  std::size_t samples_per_prompt = 0;
  std::vector<double> scores;            // scores[i - 1]: mean for layer i
  std::vector<std::vector<double>> raw;  // raw[i - 1][p·samples + s]
};

// Conditions on each layer alone through integrate_single. Throws EmptyError
// for an empty prompt list.
SweepReport single_layer_sweep(const ModelBundle& bundle, std::span<const Prompt> prompts, const Scorer& scorer,
                               const SamplingSpec& spec);

enum class SimilarityPooling { Mean, PerQuery };

struct SimilarityMatrix {
  std::size_t layers = 0;
  std::vector<double> values;  // row-major L×L
  bool zero_norm = false;      // some vector had zero norm; its off-diagonal entries are 0

  double at(std::size_t i, std::size_t j) const { return values[i * layers + j]; }  // 0-based
};

// Cosine similarity between layers of encoded features c_i [N_q, D_c]. Mean
// pooling compares the query-averaged vectors; PerQuery averages the cosine
// of matching query rows. The diagonal is 1.
SimilarityMatrix similarity_matrix(std::span<const Tensor> encoded, SimilarityPooling pooling = SimilarityPooling::Mean);

// LIM encode_layer output for every layer of one prompt.
std::vector<Tensor> encoded_layers(const ModelBundle& bundle, std::span<const int> prompt);

// Element-wise mean of the per-prompt matrices.
SimilarityMatrix mean_similarity(const ModelBundle& bundle, std::span<const Prompt> prompts,
                                 SimilarityPooling pooling = SimilarityPooling::Mean);

double mean_adjacent_similarity(const SimilarityMatrix& s);
double mean_off_diagonal_similarity(const SimilarityMatrix& s);

struct Region {
  std::string name;
  std::set<std::size_t> layers;
};

// shallow / middle / deep split following the reward layer bands.
std::vector<Region> default_regions(std::size_t layers);

struct AblationRow {
  std::string region;
  RewardKind kind = RewardKind::Alignment;
  double baseline = 0.0;
  double ablated = 0.0;
  double delta = 0.0;  // ablated - baseline
};

struct AblationReport {
  std::vector<RewardKind> kinds;
  std::vector<Region> regions;
  std::vector<double> baselines;  // per kind
  std::vector<AblationRow> rows;  // region-major
  // raw[run][kind][p·samples + s]; run 0 is the all-layer baseline, run r + 1 removes region r.
  std::vector<std::vector<std::vector<double>>> raw;
};

// Throws EmptyError for an empty region, a region covering every layer or
// no prompts, and IndexError for layers outside 1..L.
AblationReport region_ablation(const ModelBundle& bundle, std::span<const Region> regions,
                               std::span<const RewardKind> kinds, std::span<const Prompt> prompts,
                               const SamplingSpec& spec);

void write_sweep_csv(std::ostream& out, const SweepReport& report);
void write_similarity_csv(std::ostream& out, const SimilarityMatrix& s);
void write_ablation_csv(std::ostream& out, const AblationReport& report);

}  // namespace parauni
