#pragma once

// Named-tensor checkpoint file.
//
//   "BEVSCAN1"                        8 bytes magic
//   u32 count                         little-endian
//   count x {
//     u16 name_len, name (UTF-8)
//     u8  rank, rank x u32 extents
//     product(extents) x f32 (IEEE-754, little-endian)
//   }

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "bevscan/core/module.hpp"

namespace bevscan {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::array<char, 8> kCheckpointMagic{'B', 'E', 'V', 'S', 'C', 'A', 'N', '1'};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
  std::array<unsigned char, sizeof(U)> b{};
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(b.data()), b.size());
}

template <typename U>
U get_le(std::istream& is) {
  std::array<unsigned char, sizeof(U)> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), b.size())) throw CheckpointError("checkpoint truncated");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const std::vector<CheckpointEntry>& entries) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xFFFF) throw CheckpointError("tensor name too long: " + e.name.substr(0, 32));
    if (e.shape.size() > 0xFF) throw CheckpointError("tensor rank too large: " + e.name);
    if (numel_of(e.shape) != e.values.size()) throw CheckpointError("entry size mismatch: " + e.name);
    detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(e.name.size()));
    os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(e.shape.size()));
    for (auto d : e.shape) detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(d));
    for (float f : e.values) detail::put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(f));
  }
  if (!os) throw CheckpointError("checkpoint write failed");
}

inline std::vector<CheckpointEntry> read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw CheckpointError("checkpoint magic mismatch (expected BEVSCAN1)");
  }
  const auto count = detail::get_le<std::uint32_t>(is);
  std::vector<CheckpointEntry> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const auto len = detail::get_le<std::uint16_t>(is);
    e.name.resize(len);
    if (len && !is.read(e.name.data(), len)) throw CheckpointError("checkpoint truncated");
    const auto rank = detail::get_le<std::uint8_t>(is);
    for (std::uint8_t r = 0; r < rank; ++r) e.shape.push_back(detail::get_le<std::uint32_t>(is));
    e.values.resize(numel_of(e.shape));
    for (auto& f : e.values) f = std::bit_cast<float>(detail::get_le<std::uint32_t>(is));
    out.push_back(std::move(e));
  }
  return out;
}

template <typename T>
void save_params(const std::string& path, const ParamList<T>& params) {
  std::vector<CheckpointEntry> entries;
  for (const auto& [name, t] : params) {
    entries.push_back({name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open checkpoint for writing: " + path);
  write_checkpoint(os, entries);
}

/// Loads values into the given parameters by name; every parameter must be
/// present with a matching shape.
template <typename T>
void load_params(const std::string& path, ParamList<T>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint: " + path);
  std::map<std::string, CheckpointEntry> by_name;
  for (auto& e : read_checkpoint(is)) by_name.emplace(e.name, std::move(e));
  for (auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("checkpoint lacks tensor " + name);
    if (it->second.shape != t.shape()) {
      throw CheckpointError("shape mismatch for " + name + ": file " + shape_str(it->second.shape) +
                            ", model " + shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second.values[i]);
  }
}

}  // namespace bevscan
