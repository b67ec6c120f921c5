#pragma once

// Binary parameter checkpoints.
//
// Layout (all integers little-endian):
//   magic   "THORCKPT" (8 bytes)
//   version u32 (= 1)
//   count   u32
//   count records of:
//     name_len u32, name bytes (UTF-8, no terminator)
//     rows u32, cols u32
//     rows*cols IEEE-754 binary32 values, row-major, little-endian
//
// Writing then reading reproduces bit-identical values.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "thor/autodiff.hpp"
#include "thor/errors.hpp"

namespace thor::ad {

inline constexpr std::array<char, 8> kCheckpointMagic = {'T', 'H', 'O', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw IoError("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const ParamStore<float>& store) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u32(os, kCheckpointVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store.at(i);
    detail::put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(p.value.rows));
    detail::put_u32(os, static_cast<std::uint32_t>(p.value.cols));
    for (float v : p.value.data) detail::put_u32(os, std::bit_cast<std::uint32_t>(v));
  }
}

inline ParamStore<float> read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw IoError("checkpoint: bad magic");
  }
  const auto version = detail::get_u32(is);
  if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::get_u32(is);
  ParamStore<float> store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::get_u32(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError("checkpoint: truncated name");
    const auto rows = detail::get_u32(is);
    const auto cols = detail::get_u32(is);
    Matrix<float> m(rows, cols);
    for (auto& v : m.data) v = std::bit_cast<float>(detail::get_u32(is));
    store.add(name, std::move(m));
  }
  return store;
}

inline void save_checkpoint(const std::string& path, const ParamStore<float>& store) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  write_checkpoint(os, store);
  if (!os) throw IoError("write failed: " + path);
}

inline ParamStore<float> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  return read_checkpoint(is);
}

}  // namespace thor::ad
