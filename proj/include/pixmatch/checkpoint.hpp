#pragma once

// Binary checkpoint of named tensors.
//
// Layout (all integers little-endian):
//   magic   "PXMCKPT\0"            8 bytes
//   version u8                     (currently 1)
//   count   u32
//   count records of:
//     name_len u32, name bytes (UTF-8)
//     ndim     u32, ndim x u64 extents
//     payload  product(extents) x float64 (IEEE-754, little-endian)

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "pixmatch/tensor.hpp"

namespace pixmatch {

inline constexpr char kCheckpointMagic[8] = {'P', 'X', 'M', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::vector<std::uint8_t> encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace pixmatch
