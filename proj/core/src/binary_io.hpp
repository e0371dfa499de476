#pragma once

// Shared little-endian binary IO for checkpoint and raw-frame files.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "relstm/errors.hpp"

namespace relstm::io {

template <class T>
void write_pod(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <class T>
T read_pod(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw FormatError(std::string("truncated file while reading ") + what);
  return v;
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!is) throw FormatError(std::string("truncated file while reading ") + what);
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint64_t>(os, s.size());
  write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is, const char* what) {
  const auto n = read_pod<std::uint64_t>(is, what);
  std::string s(n, '\0');
  if (n) read_bytes(is, s.data(), n, what);
  return s;
}

}  // namespace relstm::io
