#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "ota/error.hpp"

namespace ota::detail {

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <class T>
void write_le(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_le(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError(std::string("truncated file while reading ") + what);
  return to_little(v);
}

template <class T>
void write_le_array(std::ostream& os, std::span<const T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(T)));
  } else {
    for (T v : values) write_le(os, v);
  }
}

template <class T>
void read_le_array(std::istream& is, std::span<T> out, const char* what) {
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * sizeof(T)));
  if (!is) throw FormatError(std::string("truncated file while reading ") + what);
  if constexpr (std::endian::native != std::endian::little) {
    for (T& v : out) v = to_little(v);
  }
}

inline std::string read_bytes(std::istream& is, std::uint64_t n, const char* what) {
  constexpr std::uint64_t kLimit = std::uint64_t{1} << 30;
  if (n > kLimit) throw FormatError(std::string("implausible length for ") + what);
  std::string s(static_cast<std::size_t>(n), '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw FormatError(std::string("truncated file while reading ") + what);
  return s;
}

}  // namespace ota::detail
