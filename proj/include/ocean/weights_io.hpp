#pragma once

// Weight file layout (all integers little-endian):
//   "OCWT" | u32 version | u32 record count |
//   per record: u32 name length | name bytes | u32 rank | u64 dims[rank] |
//               f64 payload[product(dims)]

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include "ocean/error.hpp"
#include "ocean/network.hpp"

namespace ocean {

inline constexpr char kWeightMagic[4] = {'O', 'C', 'W', 'T'};
inline constexpr std::uint32_t kWeightVersion = 1;

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
  unsigned char b[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(U))) {
    throw ArtifactError("weight file truncated");
  }
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

}  // namespace detail

template <typename T>
void write_weights(std::ostream& os, const ModelParams<T>& params) {
  os.write(kWeightMagic, 4);
  detail::put_le<std::uint32_t>(os, kWeightVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put_le<std::uint64_t>(os, d);
    for (T v : t.data()) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
  }
  if (!os) throw ArtifactError("failed writing weights");
}

template <typename T = double>
ModelParams<T> read_weights(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kWeightMagic, 4) != 0) {
    throw ArtifactError("not a weight file (bad magic)");
  }
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kWeightVersion) {
    throw ArtifactError("unsupported weight file version " + std::to_string(version));
  }
  const auto count = detail::get_le<std::uint32_t>(is);
  ModelParams<T> params;
  for (std::uint32_t r = 0; r < count; ++r) {
    const auto len = detail::get_le<std::uint32_t>(is);
    if (len > (1u << 16)) throw ArtifactError("weight record name too long");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw ArtifactError("weight file truncated");
    const auto rank = detail::get_le<std::uint32_t>(is);
    if (rank > 8) throw ArtifactError("weight record '" + name + "' has implausible rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::get_le<std::uint64_t>(is));
    const std::size_t n = shape_size(shape);
    if (n > (std::size_t{1} << 28)) throw ArtifactError("weight record '" + name + "' too large");
    std::vector<T> data(n);
    for (auto& v : data) {
      v = static_cast<T>(std::bit_cast<double>(detail::get_le<std::uint64_t>(is)));
    }
    if (!params.emplace(name, Tensor<T>(std::move(shape), std::move(data))).second) {
      throw ArtifactError("duplicate weight record '" + name + "'");
    }
  }
  return params;
}

template <typename T>
void save_weights(const std::filesystem::path& path, const ModelParams<T>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArtifactError("cannot open " + path.string() + " for writing");
  write_weights(os, params);
}

template <typename T = double>
ModelParams<T> load_weights(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArtifactError("cannot open weight file " + path.string());
  return read_weights<T>(is);
}

}  // namespace ocean
