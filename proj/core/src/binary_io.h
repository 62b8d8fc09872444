// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

// Little-endian primitive readers and writers over iostreams.

#ifndef OMNI_SRC_BINARY_IO_H_
#define OMNI_SRC_BINARY_IO_H_

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "omni/error.h"

namespace omni::io {

template <typename U>
inline void put_le(std::ostream& out, U value) {
  char bytes[sizeof(U)];
  for (size_t i = 0; i < sizeof(U); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  }
  out.write(bytes, sizeof(U));
}

template <typename U>
inline U get_le(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(U))) {
    throw FormatError(std::string("truncated input while reading ") + what);
  }
  U value = 0;
  for (size_t i = 0; i < sizeof(U); ++i) {
    value |= static_cast<U>(bytes[i]) << (8 * i);
  }
  return value;
}

inline void put_f32(std::ostream& out, float v) {
  put_le<uint32_t>(out, std::bit_cast<uint32_t>(v));
}

inline float get_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(get_le<uint32_t>(in, what));
}

inline void put_magic(std::ostream& out, const char (&magic)[5]) {
  out.write(magic, 4);
}

inline void expect_magic(std::istream& in, const char (&magic)[5],
                         const char* what) {
  char got[4];
  if (!in.read(got, 4)) throw FormatError(std::string("truncated ") + what);
  if (std::memcmp(got, magic, 4) != 0) {
    throw FormatError(std::string("bad magic in ") + what);
  }
}

}  // namespace omni::io

#endif  // OMNI_SRC_BINARY_IO_H_
