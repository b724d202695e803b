#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "mufasa/nn/tensor.hpp"

namespace mufasa::nn {

inline constexpr std::array<char, 8> kCheckpointMagic{'M', 'F', 'S', 'A', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian): magic[8], u32 version, u32 count, then per tensor
// u32 name_len, name bytes, u32 rank, u64 dims[rank], f64 values[prod(dims)].
void save_checkpoint(const Parameters& params, const std::filesystem::path& path);
Parameters load_checkpoint(const std::filesystem::path& path);

}  // namespace mufasa::nn
