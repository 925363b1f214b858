#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "emdiff/scorenet.hpp"

namespace emdiff {

// Layout (little-endian):
//   "EMDM" | u32 version | u32 layer count | u32 width * (count) | f32 params
// Parameters follow the model's [W0, b0, W1, b1, ...] order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const ScoreModel& model);
ScoreModel decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ScoreModel& model, const std::filesystem::path& path);
ScoreModel load_checkpoint(const std::filesystem::path& path);

}  // namespace emdiff
