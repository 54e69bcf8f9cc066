#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hft/errors.hpp"

namespace hft {

// Containers on disk are a single-line JSON manifest terminated by '\n',
// followed by a raw little-endian payload whose exact length the manifest
// implies. All multi-byte values are written least significant byte first,
// independent of host endianness.

namespace io {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t offset) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset])) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + 1])) << 8) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + 2])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(in[offset + 3])) << 24);
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
}

inline double get_f64(const std::string& in, std::size_t offset) {
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[offset + static_cast<std::size_t>(k)]))
            << (8 * k);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

// Splits a container file into its manifest line and payload.
inline std::pair<std::string, std::string> split_container(const std::string& bytes,
                                                           const std::string& what) {
  const std::size_t newline = bytes.find('\n');
  if (newline == std::string::npos)
    throw CorruptionError(what + ": missing manifest line");
  return {bytes.substr(0, newline), bytes.substr(newline + 1)};
}

}  // namespace io

}  // namespace hft
