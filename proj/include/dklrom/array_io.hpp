#pragma once

// Flat binary arrays. Layout: 8-byte magic "DKLROM1\0", uint32 rank, uint32
// dtype code (1 = float32), rank x uint64 dims, then the row-major data. All
// integers and values are little-endian.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace dklrom::io {

inline constexpr std::uint32_t kFloat32 = 1;

struct FloatArray {
  std::vector<std::uint64_t> dims;
  std::vector<float> data;

  std::uint64_t element_count() const;
};

void write_array(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                 std::span<const float> data);

/// Same layout, body written from consecutive chunks (e.g. one per trajectory).
void write_array(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                 const std::vector<std::span<const float>>& chunks);

/// Throws FormatError on a bad magic, dtype, truncated body or trailing bytes.
FloatArray read_array(const std::filesystem::path& path);

inline constexpr std::uint64_t kChecksumBasis = 14695981039346656037ull;

/// FNV-1a 64-bit hash of the raw little-endian bytes of `data`, continuing from `state`.
std::uint64_t checksum(std::span<const float> data, std::uint64_t state = kChecksumBasis);

/// Hex rendering used in JSON metadata.
std::string to_hex(std::uint64_t v);

}  // namespace dklrom::io
