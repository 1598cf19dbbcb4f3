#pragma once

// Little-endian primitives shared by the ZBCB / ZBCM file formats.

#include "zebra/common.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string_view>

namespace zebra::io {

static_assert(std::endian::native == std::endian::little,
              "file formats assume a little-endian host");

template <typename T>
void put(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  static_assert(std::is_trivially_copyable_v<T>);
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw Error("unexpected end of file");
  return value;
}

inline void put_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  char buf[8] = {};
  is.read(buf, static_cast<std::streamsize>(magic.size()));
  if (!is || std::string_view(buf, magic.size()) != magic)
    throw Error("bad magic, expected " + std::string(magic));
}

// A code occupies `nbytes` bytes holding its digit bit-string as an unsigned
// little-endian integer.
inline void put_packed(std::ostream& os, std::uint64_t bits, unsigned nbytes) {
  for (unsigned k = 0; k < nbytes; ++k) os.put(static_cast<char>((bits >> (8 * k)) & 0xFF));
}

inline std::uint64_t get_packed(std::istream& is, unsigned nbytes) {
  std::uint64_t bits = 0;
  for (unsigned k = 0; k < nbytes; ++k) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw Error("unexpected end of file");
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * k);
  }
  return bits;
}

}  // namespace zebra::io
