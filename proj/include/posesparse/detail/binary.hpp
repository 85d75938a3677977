#pragma once

// Little-endian primitive encoding shared by the binary file formats.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "posesparse/error.hpp"

namespace posesparse::detail {

template <typename U>
void write_le(std::ostream& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFFu);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U read_le(std::istream& in) {
  static_assert(std::is_unsigned_v<U>);
  std::array<unsigned char, sizeof(U)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw ParseError("unexpected end of binary stream");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

inline void write_f64(std::ostream& out, double v) { write_le(out, std::bit_cast<std::uint64_t>(v)); }
inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_le<std::uint64_t>(in)); }
inline void write_f32(std::ostream& out, float v) { write_le(out, std::bit_cast<std::uint32_t>(v)); }
inline float read_f32(std::istream& in) { return std::bit_cast<float>(read_le<std::uint32_t>(in)); }

inline void write_magic(std::ostream& out, std::string_view magic, std::uint32_t version) {
  out.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  write_le<std::uint32_t>(out, version);
}

// Validates the 4-byte magic and rejects any version other than `version`.
inline void expect_magic(std::istream& in, std::string_view magic, std::uint32_t version) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(got.size()));
  if (!in || got != magic) throw ParseError("bad magic, expected " + std::string(magic));
  const auto v = read_le<std::uint32_t>(in);
  if (v != version) {
    throw ParseError(std::string(magic) + ": unsupported format version " + std::to_string(v));
  }
}

}  // namespace posesparse::detail
