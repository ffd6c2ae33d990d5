#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fsra {

/// A named float32 array as stored in a checkpoint container.
struct NamedArray {
  std::string name;
  std::vector<std::uint32_t> extents;
  std::vector<float> values;
};

inline constexpr char kCheckpointMagic[4] = {'F', 'S', 'R', 'A'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers u32 little-endian): magic "FSRA", version, then per
// entry: name length, name bytes, rank, extents, raw f32 little-endian values.
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedArray>& entries);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedArray>& entries);
std::vector<NamedArray> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Exact float packing for 64-bit integers (four 16-bit limbs).
std::vector<float> pack_u64(std::uint64_t value);
std::uint64_t unpack_u64(const std::vector<float>& limbs);

}  // namespace fsra
