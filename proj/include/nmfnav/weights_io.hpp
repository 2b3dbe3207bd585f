#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "nmfnav/binary_io.hpp"
#include "nmfnav/nets.hpp"

namespace nmfnav {

// NAVW container, little-endian:
//   "NAVW" u16 version u8 arch u32 entries
//   per entry: u16 name_len, name bytes, u8 rank, u32 dims[rank], f32 values[prod(dims)]

inline std::vector<std::uint8_t> encode_weights(const ModelWeights& w) {
  binio::Writer out;
  out.bytes("NAVW");
  out.u16(w.version());
  out.u8(static_cast<std::uint8_t>(w.arch()));
  out.u32(static_cast<std::uint32_t>(w.size()));
  for (const auto& [name, t] : w) {
    out.u16(static_cast<std::uint16_t>(name.size()));
    out.bytes(name);
    out.u8(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape()) out.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) out.f32(v);
  }
  return std::move(out.buffer());
}

inline ModelWeights decode_weights(const std::vector<std::uint8_t>& bytes) {
  binio::Reader in(bytes.data(), bytes.size());
  if (bytes.size() < 4 || in.str(4) != "NAVW") throw FormatError(FormatError::Kind::bad_magic, "bad magic: not a NAVW weight file");
  const std::uint16_t version = in.u16();
  if (version != ModelWeights::kFormatVersion) {
    throw FormatError(FormatError::Kind::version_mismatch, "unsupported NAVW version " + std::to_string(version));
  }
  const std::uint8_t tag = in.u8();
  if (tag > static_cast<std::uint8_t>(Arch::nmfnet)) {
    throw FormatError(FormatError::Kind::unknown_tag, "unknown architecture tag " + std::to_string(tag));
  }
  ModelWeights w(static_cast<Arch>(tag));
  w.set_version(version);
  const std::uint32_t count = in.u32();
  for (std::uint32_t e = 0; e < count; ++e) {
    std::string name = in.str(in.u16());
    const std::uint8_t rank = in.u8();
    Shape shape(rank);
    for (auto& d : shape) d = in.u32();
    const std::size_t n = shape_numel(shape);
    if (n * 4 > in.remaining()) throw FormatError(FormatError::Kind::truncated_container, "truncated container");
    std::vector<float> values(n);
    for (auto& v : values) v = in.f32();
    Tensor t(std::move(shape), std::move(values));
    t.set_requires_grad(!is_buffer_name(name));
    w.add(std::move(name), std::move(t));
  }
  if (!in.at_end()) throw FormatError(FormatError::Kind::invalid_field, "trailing bytes after last weight entry");
  return w;
}

inline void save_weights(const ModelWeights& w, const std::filesystem::path& path) {
  const auto bytes = encode_weights(w);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline ModelWeights load_weights(const std::filesystem::path& path) { return decode_weights(read_file_bytes(path)); }

}  // namespace nmfnav
