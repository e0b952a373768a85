#include "dklrom/array_io.hpp"

#include "dklrom/errors.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace dklrom::io {
namespace {

constexpr std::array<char, 8> kMagic{'D', 'K', 'L', 'R', 'O', 'M', '1', '\0'};
constexpr std::uint64_t kMaxRank = 8;

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

template <typename T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError(path.string() + ": truncated header");
  return to_little(v);
}

}  // namespace

std::uint64_t FloatArray::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void write_array(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                 std::span<const float> data) {
  write_array(path, dims, std::vector<std::span<const float>>{data});
}

void write_array(const std::filesystem::path& path, std::span<const std::uint64_t> dims,
                 const std::vector<std::span<const float>>& chunks) {
  std::uint64_t n = 1, total = 0;
  for (auto d : dims) n *= d;
  for (const auto& c : chunks) total += c.size();
  if (n != total) throw ValidationError("write_array: dims do not match data size");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(os, static_cast<std::uint32_t>(dims.size()));
  put<std::uint32_t>(os, kFloat32);
  for (auto d : dims) put<std::uint64_t>(os, d);
  for (const auto& data : chunks) {
    if constexpr (std::endian::native == std::endian::little) {
      os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size_bytes()));
    } else {
      for (float f : data) put<float>(os, f);
    }
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

FloatArray read_array(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kMagic)
    throw FormatError(path.string() + ": bad magic bytes");
  const auto rank = get<std::uint32_t>(is, path);
  const auto dtype = get<std::uint32_t>(is, path);
  if (rank > kMaxRank) throw FormatError(path.string() + ": implausible rank " + std::to_string(rank));
  if (dtype != kFloat32) throw FormatError(path.string() + ": unsupported dtype code " + std::to_string(dtype));
  FloatArray a;
  for (std::uint32_t i = 0; i < rank; ++i) a.dims.push_back(get<std::uint64_t>(is, path));
  const std::uint64_t n = a.element_count();
  const auto body_start = is.tellg();
  is.seekg(0, std::ios::end);
  const auto body_bytes = static_cast<std::uint64_t>(is.tellg() - body_start);
  if (body_bytes != n * sizeof(float))
    throw FormatError(path.string() + ": expected " + std::to_string(n * sizeof(float)) +
                      " data bytes, found " + std::to_string(body_bytes));
  is.seekg(body_start);
  a.data.resize(n);
  is.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (!is) throw FormatError(path.string() + ": truncated data");
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : a.data) f = to_little(f);
  }
  return a;
}

std::uint64_t checksum(std::span<const float> data, std::uint64_t state) {
  std::uint64_t h = state;
  for (float f : data) {
    const auto bytes = std::bit_cast<std::array<unsigned char, 4>>(to_little(f));
    for (unsigned char b : bytes) {
      h ^= b;
      h *= 1099511628211ull;
    }
  }
  return h;
}

std::string to_hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace dklrom::io
