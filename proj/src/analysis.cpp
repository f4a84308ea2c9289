#include "parauni/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "parauni/errors.hpp"
#include "parauni/ldam.hpp"

namespace parauni {

namespace {

// One ODE sample per (prompt, sample index), scored by every scorer.
std::vector<std::vector<double>> score_run(const ModelBundle& bundle, std::span<const Prompt> prompts,
                                           const SamplingSpec& spec, std::span<const Scorer* const> scorers,
                                           const std::function<Condition(const LayerFeatures&)>& condition) {
  std::vector<std::vector<double>> out(scorers.size());
  for (const auto& p : prompts) {
    const Condition c = condition(bundle.features(p.tokens));
    for (int s = 0; s < spec.samples_per_prompt; ++s) {
      const Tensor x = sample_ode(bundle.denoiser, c, spec.steps,
                                  derive_seed(spec.seed, {static_cast<std::uint64_t>(p.id), static_cast<std::uint64_t>(s)}),
                                  bundle.sample_shape());
      for (std::size_t k = 0; k < scorers.size(); ++k) out[k].push_back(scorers[k]->score(x, p.id));
    }
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  double acc = 0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

void check_spec(std::span<const Prompt> prompts, const SamplingSpec& spec) {
  if (prompts.empty()) throw EmptyError("analysis needs at least one prompt");
  if (spec.samples_per_prompt < 1) throw DomainError("samples_per_prompt must be >= 1");
  if (spec.steps < 1) throw DomainError("sampling steps must be >= 1");
}

}  // namespace

SweepReport single_layer_sweep(const ModelBundle& bundle, std::span<const Prompt> prompts, const Scorer& scorer,
                               const SamplingSpec& spec) {
  check_spec(prompts, spec);
  NoGradGuard no_grad;
  SweepReport report;
  report.scorer = scorer.name();
  report.prompts = prompts.size();
  report.samples_per_prompt = static_cast<std::size_t>(spec.samples_per_prompt);
  const Scorer* scorers[] = {&scorer};
  for (std::size_t layer = 1; layer <= bundle.config().vlm.layers; ++layer) {
    auto raw = score_run(bundle, prompts, spec, scorers,
                         [&](const LayerFeatures& f) { return bundle.lim.integrate_single(f, layer); });
    report.scores.push_back(mean_of(raw[0]));
    report.raw.push_back(std::move(raw[0]));
  }
  return report;
}

SimilarityMatrix similarity_matrix(std::span<const Tensor> encoded, SimilarityPooling pooling) {
  if (encoded.empty()) throw EmptyError("similarity_matrix needs at least one layer");
  const std::size_t L = encoded.size();
  const std::size_t rows = encoded[0].dim(0), cols = encoded[0].dim(1);
  for (const auto& c : encoded)
    if (c.rank() != 2 || c.dim(0) != rows || c.dim(1) != cols) throw ShapeError("similarity_matrix: layer shapes differ");

  // Vectors compared per layer: the pooled row, or every row.
  const std::size_t groups = pooling == SimilarityPooling::Mean ? 1 : rows;
  std::vector<std::vector<double>> vecs(L, std::vector<double>(groups * cols, 0.0));
  for (std::size_t l = 0; l < L; ++l) {
    const auto d = encoded[l].data();
    for (std::size_t q = 0; q < rows; ++q)
      for (std::size_t j = 0; j < cols; ++j) {
        if (pooling == SimilarityPooling::Mean)
          vecs[l][j] += d[q * cols + j] / static_cast<double>(rows);
        else
          vecs[l][q * cols + j] = d[q * cols + j];
      }
  }

  SimilarityMatrix s;
  s.layers = L;
  s.values.assign(L * L, 0.0);
  for (std::size_t i = 0; i < L; ++i) {
    s.values[i * L + i] = 1.0;
    for (std::size_t j = i + 1; j < L; ++j) {
      double acc = 0;
      for (std::size_t g = 0; g < groups; ++g) {
        double dot = 0, ni = 0, nj = 0;
        for (std::size_t k = 0; k < cols; ++k) {
          const double a = vecs[i][g * cols + k], b = vecs[j][g * cols + k];
          dot += a * b;
          ni += a * a;
          nj += b * b;
        }
        if (ni == 0.0 || nj == 0.0) {
          s.zero_norm = true;
          continue;
        }
        acc += std::clamp(dot / std::sqrt(ni * nj), -1.0, 1.0);
      }
      s.values[i * L + j] = s.values[j * L + i] = acc / static_cast<double>(groups);
    }
  }
  return s;
}

std::vector<Tensor> encoded_layers(const ModelBundle& bundle, std::span<const int> prompt) {
  NoGradGuard no_grad;
  const auto f = bundle.features(prompt);
  std::vector<Tensor> out;
  for (std::size_t i = 1; i <= f.size(); ++i) out.push_back(bundle.lim.encode_layer(f.layer(i), i));
  return out;
}

SimilarityMatrix mean_similarity(const ModelBundle& bundle, std::span<const Prompt> prompts,
                                 SimilarityPooling pooling) {
  if (prompts.empty()) throw EmptyError("mean_similarity needs at least one prompt");
  SimilarityMatrix acc;
  for (const auto& p : prompts) {
    const auto layers = encoded_layers(bundle, p.tokens);
    auto s = similarity_matrix(layers, pooling);
    if (acc.values.empty()) {
      acc = std::move(s);
      continue;
    }
    for (std::size_t k = 0; k < acc.values.size(); ++k) acc.values[k] += s.values[k];
    acc.zero_norm = acc.zero_norm || s.zero_norm;
  }
  for (double& v : acc.values) v /= static_cast<double>(prompts.size());
  // keep exact symmetry and diagonal after averaging
  for (std::size_t i = 0; i < acc.layers; ++i) {
    acc.values[i * acc.layers + i] = 1.0;
    for (std::size_t j = i + 1; j < acc.layers; ++j) acc.values[j * acc.layers + i] = acc.values[i * acc.layers + j];
  }
  return acc;
}

double mean_adjacent_similarity(const SimilarityMatrix& s) {
  if (s.layers < 2) return 1.0;
  double acc = 0;
  for (std::size_t i = 0; i + 1 < s.layers; ++i) acc += s.at(i, i + 1);
  return acc / static_cast<double>(s.layers - 1);
}

double mean_off_diagonal_similarity(const SimilarityMatrix& s) {
  if (s.layers < 2) return 1.0;
  double acc = 0;
  for (std::size_t i = 0; i < s.layers; ++i)
    for (std::size_t j = 0; j < s.layers; ++j)
      if (i != j) acc += s.at(i, j);
  return acc / static_cast<double>(s.layers * (s.layers - 1));
}

std::vector<Region> default_regions(std::size_t layers) {
  std::vector<Region> out;
  std::set<std::size_t> middle, deep;
  try {
    middle = select_layers(RewardKind::Quality, layers);
    deep = select_layers(RewardKind::Alignment, layers);
  } catch (const EmptyError&) {
    throw EmptyError("default regions need a deeper model (L = " + std::to_string(layers) + ")");
  }
  std::set<std::size_t> shallow;
  for (std::size_t i = 1; i < *middle.begin(); ++i) shallow.insert(i);
  for (std::size_t i : deep) middle.erase(i);
  if (!shallow.empty()) out.push_back({"shallow", shallow});
  if (!middle.empty()) out.push_back({"middle", middle});
  out.push_back({"deep", deep});
  return out;
}

AblationReport region_ablation(const ModelBundle& bundle, std::span<const Region> regions,
                               std::span<const RewardKind> kinds, std::span<const Prompt> prompts,
                               const SamplingSpec& spec) {
  check_spec(prompts, spec);
  const std::size_t L = bundle.config().vlm.layers;
  std::vector<std::set<std::size_t>> complements;
  for (const auto& r : regions) {
    if (r.layers.empty()) throw EmptyError("region '" + r.name + "' is empty");
    if (*r.layers.begin() < 1 || *r.layers.rbegin() > L)
      throw IndexError("region '" + r.name + "' has layers outside 1.." + std::to_string(L));
    std::set<std::size_t> keep;
    for (std::size_t i = 1; i <= L; ++i)
      if (!r.layers.count(i)) keep.insert(i);
    if (keep.empty()) throw EmptyError("region '" + r.name + "' covers every layer");
    complements.push_back(std::move(keep));
  }

  NoGradGuard no_grad;
  std::vector<ToyScorer> toy;
  for (RewardKind k : kinds) toy.emplace_back(k);
  std::vector<const Scorer*> scorers;
  for (const auto& s : toy) scorers.push_back(&s);

  AblationReport report;
  report.kinds.assign(kinds.begin(), kinds.end());
  report.regions.assign(regions.begin(), regions.end());
  report.raw.push_back(score_run(bundle, prompts, spec, scorers,
                                 [&](const LayerFeatures& f) { return bundle.lim.integrate(f); }));
  for (std::size_t k = 0; k < kinds.size(); ++k) report.baselines.push_back(mean_of(report.raw[0][k]));
  for (std::size_t r = 0; r < regions.size(); ++r) {
    report.raw.push_back(score_run(bundle, prompts, spec, scorers, [&](const LayerFeatures& f) {
      return bundle.lim.integrate_subset(f, complements[r]);
    }));
    for (std::size_t k = 0; k < kinds.size(); ++k) {
      AblationRow row{regions[r].name, kinds[k], report.baselines[k], mean_of(report.raw[r + 1][k]), 0.0};
      row.delta = row.ablated - row.baseline;
      report.rows.push_back(row);
    }
  }
  return report;
}

void write_sweep_csv(std::ostream& out, const SweepReport& report) {
  out << "layer,score\n";
  out.precision(9);
  for (std::size_t i = 0; i < report.scores.size(); ++i) out << i + 1 << ',' << report.scores[i] << '\n';
}

void write_similarity_csv(std::ostream& out, const SimilarityMatrix& s) {
  out << "i,j,value\n";
  out.precision(9);
  for (std::size_t i = 0; i < s.layers; ++i)
    for (std::size_t j = 0; j < s.layers; ++j) out << i + 1 << ',' << j + 1 << ',' << s.at(i, j) << '\n';
}

void write_ablation_csv(std::ostream& out, const AblationReport& report) {
  out << "region,reward,baseline,ablated,delta\n";
  out.precision(9);
  for (std::size_t k = 0; k < report.kinds.size(); ++k)
    out << "none," << reward_name(report.kinds[k]) << ',' << report.baselines[k] << ',' << report.baselines[k]
        << ",0\n";
  for (const auto& r : report.rows)
    out << r.region << ',' << reward_name(r.kind) << ',' << r.baseline << ',' << r.ablated << ',' << r.delta << '\n';
}

}  // namespace parauni
