#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "parauni/config.hpp"
#include "parauni/prompt.hpp"
#include "parauni/tensor.hpp"

namespace parauni {

// Prompt-indexed Gaussian bumps on a rows×cols grid. Every prompt has one
// clean pattern; stored targets are noisy copies of it.
struct SyntheticDataset {
  std::uint64_t seed = 0;
  std::size_t rows = 0, cols = 0;
  std::vector<Prompt> prompts;
  std::vector<Tensor> patterns;                 // clean pattern per prompt
  std::vector<std::vector<Tensor>> stage1;      // [prompt][target], noise data.stage1_noise
  std::vector<std::vector<Tensor>> stage2;      // [prompt][target], noise data.stage2_noise
  std::vector<std::vector<Tensor>> eval;        // held-out draws at the stage-2 noise

  const Prompt& prompt(int id) const;
};

// Deterministic in (config, seed). Throws EmptyError for zero prompts.
SyntheticDataset make_dataset(const DataConfig& data, std::size_t vocab, std::size_t rows, std::size_t cols,
                              std::uint64_t seed);
SyntheticDataset make_dataset(const PipelineConfig& config);

std::string encode_dataset(const SyntheticDataset& dataset);
SyntheticDataset decode_dataset(const std::string& bytes);

struct DatasetManifest {
  std::size_t prompts = 0;
  std::size_t stage1_targets = 0, stage2_targets = 0, eval_targets = 0;
  std::uint64_t seed = 0;
  std::string checksum;  // FNV-1a of dataset.bin, hex
};

// Writes dir/dataset.bin and dir/manifest.txt, creating dir. Throws IoError.
DatasetManifest write_dataset(const SyntheticDataset& dataset, const std::string& dir);
// Verifies the checksum against the manifest. Throws IoError or FormatError.
SyntheticDataset read_dataset(const std::string& dir);
DatasetManifest read_manifest(const std::string& dir);

}  // namespace parauni
