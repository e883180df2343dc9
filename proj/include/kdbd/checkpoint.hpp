#pragma once
// Binary checkpoint format (all integers little-endian):
//
//   "KDBL"                       4 bytes magic
//   u32 format version           currently 1
//   u32 length + bytes           descriptor: ArchSpec::canonical() + ";role=<teacher|student>"
//   per tensor, until EOF:
//     u32 length + bytes         tensor name
//     u32 rank
//     u64 extents[rank]
//     f32 values[product(extents)]
//
// Tensors appear in NetworkParams order; loading validates names and shapes
// against the descriptor.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kdbd/network.hpp"

namespace kdbd::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string checkpoint_bytes(const NetworkParams<float>& params);
NetworkParams<float> parse_checkpoint(const std::string& bytes);

void save_checkpoint(const NetworkParams<float>& params, const std::filesystem::path& path);
NetworkParams<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace kdbd::nn
