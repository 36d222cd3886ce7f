#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "geoproto/error.hpp"
#include "geoproto/tensor.hpp"

namespace geoproto {

// Parameter checkpoint: magic "GPRT", u32 format version, then a list of
// named tensors (u32 name length, name bytes, u32 rank, u32 dims, f64 data,
// everything little-endian).
constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
inline void write_u32(std::ofstream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}
inline std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw FormatError("checkpoint: truncated file");
  return v;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<std::pair<std::string, TensorPtr>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("checkpoint: cannot open " + path + " for writing");
  out.write("GPRT", 4);
  detail::write_u32(out, kCheckpointVersion);
  detail::write_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(out, static_cast<std::uint32_t>(t->shape.size()));
    for (int d : t->shape) detail::write_u32(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t->values.data()),
              static_cast<std::streamsize>(t->values.size() * sizeof(double)));
  }
  if (!out) throw FormatError("checkpoint: write failed for " + path);
}

inline std::map<std::string, TensorPtr> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "GPRT", 4) != 0)
    throw FormatError("checkpoint: bad magic in " + path);
  std::uint32_t version = detail::read_u32(in);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  std::uint32_t count = detail::read_u32(in);
  std::map<std::string, TensorPtr> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = detail::read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    std::uint32_t rank = detail::read_u32(in);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::read_u32(in));
    auto t = tensor(shape);
    in.read(reinterpret_cast<char*>(t->values.data()),
            static_cast<std::streamsize>(t->values.size() * sizeof(double)));
    if (!in) throw FormatError("checkpoint: truncated tensor data in " + path);
    out[name] = t;
  }
  return out;
}

}  // namespace geoproto
