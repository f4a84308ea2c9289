#include "parauni/dataset.hpp"

#include <cmath>
#include <filesystem>

#include "parauni/binio.hpp"
#include "parauni/errors.hpp"
#include "parauni/rng.hpp"

namespace parauni {

namespace {

constexpr char kMagic[] = "PUND";
constexpr std::uint32_t kVersion = 1;

// One or two bumps; the pattern is scaled to RMS 0.6 so the quality reward
// starts away from its optimum.
Tensor bump_pattern(Rng& rng, std::size_t rows, std::size_t cols) {
  std::vector<float> v(rows * cols, 0.0f);
  const int bumps = 1 + static_cast<int>(rng.below(2));
  for (int b = 0; b < bumps; ++b) {
    const double cy = rng.uniform() * double(rows - 1), cx = rng.uniform() * double(cols - 1);
    const double width = 0.8 + 1.2 * rng.uniform();
    const double amp = rng.uniform() < 0.5 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const double d2 = (double(r) - cy) * (double(r) - cy) + (double(c) - cx) * (double(c) - cx);
        v[r * cols + c] += static_cast<float>(amp * std::exp(-d2 / (2 * width * width)));
      }
  }
  double ss = 0;
  for (float x : v) ss += double(x) * x;
  const double scale = 0.6 / std::sqrt(ss / double(v.size()) + 1e-12);
  for (float& x : v) x = static_cast<float>(x * scale);
  return Tensor::from_data({rows, cols}, std::move(v));
}

std::vector<Tensor> noisy_copies(const Tensor& pattern, int count, float noise, Rng& rng) {
  std::vector<Tensor> out;
  for (int i = 0; i < count; ++i) {
    std::vector<float> v(pattern.data().begin(), pattern.data().end());
    for (float& x : v) x += noise * rng.normal();
    out.push_back(Tensor::from_data(pattern.shape(), std::move(v)));
  }
  return out;
}

}  // namespace

const Prompt& SyntheticDataset::prompt(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= prompts.size())
    throw IndexError("prompt id " + std::to_string(id) + " outside 0.." + std::to_string(prompts.size() - 1));
  return prompts[static_cast<std::size_t>(id)];
}

SyntheticDataset make_dataset(const DataConfig& data, std::size_t vocab, std::size_t rows, std::size_t cols,
                              std::uint64_t seed) {
  if (data.prompts < 1) throw EmptyError("dataset needs at least one prompt");
  if (data.targets_per_prompt < 1 || data.eval_targets_per_prompt < 1)
    throw EmptyError("every prompt needs at least one target");
  SyntheticDataset ds;
  ds.seed = seed;
  ds.rows = rows;
  ds.cols = cols;
  for (int p = 0; p < data.prompts; ++p) {
    const auto id = static_cast<std::uint64_t>(p);
    Rng rng(derive_seed(seed, {id, 0}));
    Prompt prompt{p, {}};
    for (int t = 0; t < data.prompt_len; ++t) prompt.tokens.push_back(static_cast<int>(rng.below(vocab)));
    ds.prompts.push_back(std::move(prompt));
    ds.patterns.push_back(bump_pattern(rng, rows, cols));
    Rng r1(derive_seed(seed, {id, 1})), r2(derive_seed(seed, {id, 2})), r3(derive_seed(seed, {id, 3}));
    ds.stage1.push_back(noisy_copies(ds.patterns.back(), data.targets_per_prompt, data.stage1_noise, r1));
    ds.stage2.push_back(noisy_copies(ds.patterns.back(), data.targets_per_prompt, data.stage2_noise, r2));
    ds.eval.push_back(noisy_copies(ds.patterns.back(), data.eval_targets_per_prompt, data.stage2_noise, r3));
  }
  return ds;
}

SyntheticDataset make_dataset(const PipelineConfig& config) {
  return make_dataset(config.data, config.vocab, config.rows, config.cols, derive_seed(config.seed, {0x64617461}));
}

std::string encode_dataset(const SyntheticDataset& ds) {
  binio::Writer w;
  w.raw(std::string(kMagic, 4));
  w.u32(kVersion);
  w.u64(ds.seed);
  w.u64(ds.rows);
  w.u64(ds.cols);
  w.u64(ds.prompts.size());
  auto sets = [&](const std::vector<Tensor>& ts) {
    w.u64(ts.size());
    for (const auto& t : ts) w.tensor(t);
  };
  for (std::size_t p = 0; p < ds.prompts.size(); ++p) {
    w.u64(ds.prompts[p].tokens.size());
    for (int t : ds.prompts[p].tokens) w.u32(static_cast<std::uint32_t>(t));
    w.tensor(ds.patterns[p]);
    sets(ds.stage1[p]);
    sets(ds.stage2[p]);
    sets(ds.eval[p]);
  }
  return w.bytes();
}

SyntheticDataset decode_dataset(const std::string& bytes) {
  binio::Reader r(bytes);
  if (r.raw(4) != std::string(kMagic, 4)) throw FormatError("not a dataset file", 0);
  if (const auto v = r.u32(); v != kVersion) throw FormatError("unsupported dataset version " + std::to_string(v), 4);
  SyntheticDataset ds;
  ds.seed = r.u64();
  ds.rows = r.u64();
  ds.cols = r.u64();
  const std::uint64_t n = r.u64();
  if (n > bytes.size()) r.fail("prompt count exceeds the file");
  auto sets = [&]() {
    const std::uint64_t count = r.u64();
    if (count > bytes.size()) r.fail("target count exceeds the file");
    std::vector<Tensor> ts;
    for (std::uint64_t i = 0; i < count; ++i) {
      ts.push_back(r.tensor());
      if (ts.back().shape() != Shape{ds.rows, ds.cols}) r.fail("target shape disagrees with the header");
    }
    return ts;
  };
  for (std::uint64_t p = 0; p < n; ++p) {
    Prompt prompt{static_cast<int>(p), {}};
    const std::uint64_t len = r.u64();
    if (len > bytes.size()) r.fail("prompt length exceeds the file");
    for (std::uint64_t i = 0; i < len; ++i) prompt.tokens.push_back(static_cast<int>(r.u32()));
    ds.prompts.push_back(std::move(prompt));
    ds.patterns.push_back(r.tensor());
    ds.stage1.push_back(sets());
    ds.stage2.push_back(sets());
    ds.eval.push_back(sets());
  }
  if (!r.at_end()) r.fail("trailing bytes after the dataset");
  return ds;
}

DatasetManifest write_dataset(const SyntheticDataset& ds, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  const std::string bytes = encode_dataset(ds);
  DatasetManifest m;
  m.prompts = ds.prompts.size();
  for (std::size_t p = 0; p < m.prompts; ++p) {
    m.stage1_targets += ds.stage1[p].size();
    m.stage2_targets += ds.stage2[p].size();
    m.eval_targets += ds.eval[p].size();
  }
  m.seed = ds.seed;
  m.checksum = binio::hex64(binio::fnv1a(bytes));
  binio::write_file(dir + "/dataset.bin", bytes);
  binio::write_file(dir + "/manifest.txt", "prompts = " + std::to_string(m.prompts) + "\nstage1_targets = " +
                                               std::to_string(m.stage1_targets) + "\nstage2_targets = " +
                                               std::to_string(m.stage2_targets) + "\neval_targets = " +
                                               std::to_string(m.eval_targets) + "\nseed = " + std::to_string(m.seed) +
                                               "\nchecksum = " + m.checksum + "\n");
  return m;
}

DatasetManifest read_manifest(const std::string& dir) {
  std::map<std::string, std::string> kv;
  try {
    kv = parse_key_values(binio::read_file(dir + "/manifest.txt"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what(), 0);
  }
  auto get = [&](const char* key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError(std::string("manifest lacks '") + key + "'", 0);
    return it->second;
  };
  DatasetManifest m;
  try {
    m.prompts = std::stoull(get("prompts"));
    m.stage1_targets = std::stoull(get("stage1_targets"));
    m.stage2_targets = std::stoull(get("stage2_targets"));
    m.eval_targets = std::stoull(get("eval_targets"));
    m.seed = std::stoull(get("seed"));
  } catch (const std::logic_error&) {
    throw FormatError("malformed manifest count", 0);
  }
  m.checksum = get("checksum");
  return m;
}

SyntheticDataset read_dataset(const std::string& dir) {
  const auto manifest = read_manifest(dir);
  const std::string bytes = binio::read_file(dir + "/dataset.bin");
  if (binio::hex64(binio::fnv1a(bytes)) != manifest.checksum)
    throw FormatError("dataset checksum does not match the manifest", 0);
  auto ds = decode_dataset(bytes);
  if (ds.prompts.size() != manifest.prompts) throw FormatError("dataset prompt count disagrees with the manifest", 0);
  return ds;
}

}  // namespace parauni
