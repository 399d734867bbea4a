#pragma once

#include <string>
#include <string_view>

namespace realign {

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

// 64-bit FNV-1a; stable across platforms, used for hashed embeddings.
constexpr unsigned long long fnv1a64(std::string_view s) {
  unsigned long long h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace realign
