// Copyright 2026 The Balmix Authors
//
// Licensed under the Apache License, Version 2.0 http://www.apache.org/licenses/LICENSE-2.0

#ifndef BALMIX_HASH_HPP
#define BALMIX_HASH_HPP

#include <cstdint>
#include <string>
#include <string_view>

namespace balmix {

// FNV-1a, used for config/corpus/vocab fingerprints in artifact sidecars.
// Stable across platforms; not cryptographic and not meant to be.
inline std::uint64_t fnv1a64_bytes(const void* data, std::size_t len,
                                   std::uint64_t h = 0xcbf29ce484222325ULL) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[std::size_t(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

inline std::string content_hash(std::string_view s) {
  return hex64(fnv1a64_bytes(s.data(), s.size()));
}

}  // namespace balmix

#endif  // BALMIX_HASH_HPP
