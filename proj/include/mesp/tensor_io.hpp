#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "mesp/tensor.hpp"

namespace mesp {

// Tensor container, little-endian, no padding:
//   "MESP" | u32 version=1 | u8 dtype=1 (f32) | u8 rank | rank x u64 dims |
//   row-major f32 payload
inline constexpr char kTensorMagic[4] = {'M', 'E', 'S', 'P'};
inline constexpr std::uint32_t kTensorVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

std::uint64_t container_header_bytes(std::int64_t rank);
std::uint64_t container_payload_bytes(const Shape& shape);

void write_tensor(std::ostream& os, const Tensor& t);
// Reads exactly one container record; trailing bytes are left in the stream.
Tensor read_tensor(std::istream& is);

void save_tensor(const Tensor& t, const std::filesystem::path& path);
// Rejects trailing bytes after the payload.
Tensor load_tensor(const std::filesystem::path& path);

// Little-endian scalar helpers shared with the checkpoint format.
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
std::uint32_t read_u32(std::istream& is, const char* field);
std::uint64_t read_u64(std::istream& is, const char* field);

}  // namespace mesp
