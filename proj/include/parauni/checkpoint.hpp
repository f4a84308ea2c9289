#pragma once

#include <string>

#include "parauni/train.hpp"

namespace parauni {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "PUNI", u32 version, config echo, stage counters, named parameter records,
// optimizer moments, RNG state, controller state and masks; little-endian.
std::string encode_checkpoint(const TrainingState& state);
// Throws FormatError with the byte offset of the first bad field.
TrainingState decode_checkpoint(const std::string& bytes);

void save_checkpoint(const TrainingState& state, const std::string& path);
TrainingState load_checkpoint(const std::string& path);
// Replaces `target` only when the whole file decodes.
void restore_checkpoint(TrainingState& target, const std::string& path);

}  // namespace parauni
