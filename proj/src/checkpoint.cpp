#include "parauni/checkpoint.hpp"

#include <map>

#include "parauni/binio.hpp"
#include "parauni/errors.hpp"

namespace parauni {

namespace {

constexpr char kMagic[] = "PUNI";
constexpr char kEnd[] = "DONE";

void write_masks(binio::Writer& w, const LayerMaskSet& masks) {
  w.u64(masks.size());
  for (const auto& [layer, m] : masks.entries()) {
    w.u64(layer);
    w.tensor(m);
  }
}

LayerMaskSet read_masks(binio::Reader& r, const Shape& shape, std::size_t layers) {
  LayerMaskSet masks;
  const std::size_t at = r.offset();
  const std::uint64_t n = r.u64();
  if (n > layers) throw FormatError("mask count exceeds the layer count", at);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::size_t layer_at = r.offset();
    const std::uint64_t layer = r.u64();
    if (layer < 1 || layer > layers) throw FormatError("mask layer out of range", layer_at);
    const std::size_t tensor_at = r.offset();
    Tensor m = r.tensor();
    if (m.shape() != shape) throw FormatError("mask shape disagrees with the model", tensor_at);
    masks.set(layer, std::move(m));
  }
  return masks;
}

}  // namespace

std::string encode_checkpoint(const TrainingState& s) {
  binio::Writer w;
  w.raw(std::string(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.str(s.config.to_text());
  w.u32(static_cast<std::uint32_t>(s.stage));
  w.u32(static_cast<std::uint32_t>(s.next_epoch));
  w.u32(static_cast<std::uint32_t>(s.reward_index));
  w.u8(s.complete ? 1 : 0);

  const auto params = s.bundle.all_params();
  w.u64(params.size());
  for (const auto& p : params) {
    w.str(p.name);
    w.tensor(p.tensor);
  }

  w.i64(s.optimizer.steps());
  w.u64(s.optimizer.moments().size());
  for (const auto& [name, m] : s.optimizer.moments()) {
    w.str(name);
    w.floats(m.m);
    w.floats(m.v);
  }

  w.str(s.rng.serialize());

  const auto& l = s.ldam;
  w.f64(l.g_prev);
  w.f64(l.r_prev);
  w.i64(l.n_cool);
  w.i64(l.r_s);
  w.u8(l.g_s ? 1 : 0);
  w.i64(l.epoch);
  w.i64(l.events);
  w.u64(l.mask_seed);
  w.f64(l.last_gamma);
  w.u64(l.last_layers.size());
  for (std::size_t i : l.last_layers) w.u64(i);
  w.u64(l.mask_shape.rows);
  w.u64(l.mask_shape.cols);
  write_masks(w, l.active_masks);
  write_masks(w, s.carried);
  w.raw(std::string(kEnd, 4));
  return w.bytes();
}

TrainingState decode_checkpoint(const std::string& bytes) {
  binio::Reader r(bytes);
  if (bytes.size() < 4 || r.raw(4) != std::string(kMagic, 4)) throw FormatError("not a checkpoint (bad magic)", 0);
  if (const auto v = r.u32(); v != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v), 4);

  const std::size_t config_at = r.offset();
  PipelineConfig config;
  try {
    config = PipelineConfig::from_text(r.str());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad config echo: ") + e.what(), config_at);
  }
  const std::size_t stage_at = r.offset();
  const int stage = static_cast<int>(r.u32());
  if (stage < 1 || stage > 3) throw FormatError("bad stage number", stage_at);
  TrainingState s = TrainingState::fresh(config, stage);
  s.next_epoch = static_cast<int>(r.u32());
  s.reward_index = static_cast<int>(r.u32());
  s.complete = r.u8() != 0;

  // Decoded into fresh tensors first; the bundle is only written once every
  // record has been read.
  std::map<std::string, Tensor> expected;
  for (const auto& p : s.bundle.all_params()) expected.emplace(p.name, p.tensor);
  std::map<std::string, Tensor> loaded;
  const std::size_t count_at = r.offset();
  if (r.u64() != expected.size()) throw FormatError("parameter count disagrees with the model", count_at);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const std::size_t at = r.offset();
    std::string name = r.str();
    auto it = expected.find(name);
    if (it == expected.end()) throw FormatError("unknown parameter '" + name + "'", at);
    Tensor t = r.tensor();
    if (t.shape() != it->second.shape()) throw FormatError("parameter '" + name + "' has the wrong shape", at);
    if (!loaded.emplace(std::move(name), std::move(t)).second) throw FormatError("duplicate parameter record", at);
  }

  const std::int64_t steps = r.i64();
  std::map<std::string, AdamW::Moments> moments;
  const std::size_t moments_at = r.offset();
  const std::uint64_t n_moments = r.u64();
  if (n_moments > expected.size()) throw FormatError("too many optimizer records", moments_at);
  for (std::uint64_t i = 0; i < n_moments; ++i) {
    const std::size_t at = r.offset();
    std::string name = r.str();
    auto it = expected.find(name);
    if (it == expected.end()) throw FormatError("optimizer record for unknown parameter '" + name + "'", at);
    AdamW::Moments m{r.floats(), r.floats()};
    if (m.m.size() != it->second.numel() || m.v.size() != it->second.numel())
      throw FormatError("optimizer record '" + name + "' has the wrong length", at);
    moments.emplace(std::move(name), std::move(m));
  }

  const std::size_t rng_at = r.offset();
  Rng rng;
  try {
    rng.deserialize(r.str());
  } catch (const FormatError&) {
    throw FormatError("malformed RNG state", rng_at);
  }

  LdamState l;
  l.g_prev = r.f64();
  l.r_prev = r.f64();
  l.n_cool = r.i64();
  l.r_s = r.i64();
  l.g_s = r.u8() != 0;
  l.epoch = r.i64();
  l.events = r.i64();
  l.mask_seed = r.u64();
  l.last_gamma = r.f64();
  const std::size_t layers = s.bundle.config().vlm.layers;
  const std::size_t layers_at = r.offset();
  const std::uint64_t n_layers = r.u64();
  if (n_layers > layers) throw FormatError("controller layer list too long", layers_at);
  for (std::uint64_t i = 0; i < n_layers; ++i) l.last_layers.insert(r.u64());
  l.mask_shape.rows = r.u64();
  l.mask_shape.cols = r.u64();
  const Shape mask_shape{s.bundle.config().vlm.queries, s.bundle.config().lim.out_width};
  l.active_masks = read_masks(r, mask_shape, layers);
  LayerMaskSet carried = read_masks(r, mask_shape, layers);
  const std::size_t end_at = r.offset();
  if (r.raw(4) != std::string(kEnd, 4)) throw FormatError("missing end marker", end_at);
  if (!r.at_end()) r.fail("trailing bytes after the end marker");

  for (const auto& p : s.bundle.all_params()) {
    Tensor dst = p.tensor;
    const auto& src = loaded.at(p.name);
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
  }
  s.optimizer.set_steps(steps);
  s.optimizer.moments() = std::move(moments);
  s.rng = rng;
  s.ldam = std::move(l);
  s.carried = std::move(carried);
  return s;
}

void save_checkpoint(const TrainingState& state, const std::string& path) {
  binio::write_file(path, encode_checkpoint(state));
}

TrainingState load_checkpoint(const std::string& path) { return decode_checkpoint(binio::read_file(path)); }

void restore_checkpoint(TrainingState& target, const std::string& path) {
  TrainingState loaded = load_checkpoint(path);
  target = std::move(loaded);
}

}  // namespace parauni
