#pragma once

#include <string>

#include "synthworlds/worlds.hpp"

namespace tap::worlds {

// File layout (little-endian):
//   "TAPDS1", u8 world, u8 flags (bit0 positions, bit1 bottleneck truth), u32 episode count,
//   u16 T, H, W, C, u64 seed; then per episode
//   u16 entities, u16 bottlenecks, f32 frames[T*C*H*W], u16 (x, y) per frame per entity,
//   u16 bottleneck indices, u32 CRC32 over the preceding episode bytes.
void write_dataset(const Dataset& d, const std::string& path);
Dataset read_dataset(const std::string& path);
std::vector<char> encode_dataset(const Dataset& d);
Dataset decode_dataset(const std::vector<char>& bytes, const std::string& what = "dataset");

// Binary PPM (C = 3) or PGM (C = 1) of one [C,H,W] frame in [-1, 1].
void write_image(const std::string& path, const double* chw, std::size_t channels, std::size_t height,
                 std::size_t width);

}  // namespace tap::worlds
