#pragma once

// Checkpoint layout (all integers little-endian):
//
//   "MOEISRCK"            8-byte magic
//   u32 version           kCheckpointVersion
//   u32 feat_dim, n_res_blocks, mapper_layers, mapper_hidden, expert_hidden
//   u32 J, then J × u32 expert depths
//   u64 seed
//   u32 tensor count, then per tensor:
//     u32 name length, name bytes, u32 rank, rank × u32 extents,
//     numel × f32 values

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "moeisr/models.hpp"

namespace moeisr {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> encode_checkpoint(const ModelParams<float>& params);
ModelParams<float> decode_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params);
ModelParams<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace moeisr
