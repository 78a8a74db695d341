#include "mesp/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include "mesp/error.hpp"

namespace mesp {

namespace {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

template <typename U>
void write_le(std::ostream& os, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  os.write(bytes.data(), bytes.size());
}

template <typename U>
U read_le(std::istream& is, const char* field) {
  std::array<unsigned char, sizeof(U)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (is.gcount() != static_cast<std::streamsize>(bytes.size())) {
    fail(ErrorKind::kFormat, std::string("truncated while reading ") + field);
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
std::uint32_t read_u32(std::istream& is, const char* field) {
  return read_le<std::uint32_t>(is, field);
}
std::uint64_t read_u64(std::istream& is, const char* field) {
  return read_le<std::uint64_t>(is, field);
}

std::uint64_t container_header_bytes(std::int64_t rank) {
  return 4 + 4 + 1 + 1 + 8 * static_cast<std::uint64_t>(rank);
}

std::uint64_t container_payload_bytes(const Shape& shape) {
  return static_cast<std::uint64_t>(shape_numel(shape)) * 4;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  if (t.rank() < 1 || t.rank() > 255) {
    fail(ErrorKind::kInvalidShape, "container rank must be within [1, 255]");
  }
  os.write(kTensorMagic, 4);
  write_u32(os, kTensorVersion);
  os.put(static_cast<char>(kDtypeF32));
  os.put(static_cast<char>(t.rank()));
  for (auto d : t.shape()) write_u64(os, static_cast<std::uint64_t>(d));
  for (float v : t.data()) write_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) fail(ErrorKind::kIo, "failed writing tensor payload");
}

Tensor read_tensor(std::istream& is) {
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4) fail(ErrorKind::kFormat, "truncated while reading magic");
  if (std::memcmp(magic, kTensorMagic, 4) != 0) {
    fail(ErrorKind::kFormat, "bad magic (expected \"MESP\")");
  }
  const auto version = read_u32(is, "version");
  if (version != kTensorVersion) {
    fail(ErrorKind::kFormat, "unsupported version " + std::to_string(version));
  }
  const int dtype = is.get();
  if (dtype == std::char_traits<char>::eof()) fail(ErrorKind::kFormat, "truncated while reading dtype");
  if (dtype != kDtypeF32) fail(ErrorKind::kFormat, "unsupported dtype code " + std::to_string(dtype));
  const int rank = is.get();
  if (rank == std::char_traits<char>::eof()) fail(ErrorKind::kFormat, "truncated while reading rank");
  if (rank == 0) fail(ErrorKind::kFormat, "rank must be at least 1");

  Shape shape;
  for (int i = 0; i < rank; ++i) {
    const auto d = read_u64(is, "axis length");
    if (d == 0 || d > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max() / 4)) {
      fail(ErrorKind::kFormat, "invalid axis length " + std::to_string(d));
    }
    shape.push_back(static_cast<std::int64_t>(d));
  }
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  std::vector<float> data(n);
  std::vector<unsigned char> raw(n * 4);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size()) {
    fail(ErrorKind::kFormat, "truncated payload: expected " + std::to_string(raw.size()) +
                                 " bytes, got " + std::to_string(is.gcount()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (std::size_t b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(raw[4 * i + b]) << (8 * b);
    data[i] = std::bit_cast<float>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const Tensor& t, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorKind::kIo, "cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::kIo, "cannot open " + path.string() + " for reading");
  Tensor t = read_tensor(is);
  if (is.peek() != std::char_traits<char>::eof()) {
    fail(ErrorKind::kFormat, "trailing bytes after payload in " + path.string());
  }
  return t;
}

}  // namespace mesp
