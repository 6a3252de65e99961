#pragma once

#include <cstdint>
#include <cstring>
#include <string_view>

namespace fgn {

/// splitmix64 finalizer. Decorrelates substreams drawn from one master seed;
/// equal (seed, stream) pairs always map to the same value.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a_bytes(const void* data, std::size_t len,
                                 std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(std::string_view s,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a_bytes(s.data(), s.size(), h);
}

inline std::uint64_t fnv1a_u64(std::uint64_t v,
                               std::uint64_t h = 0xcbf29ce484222325ull) {
  unsigned char bytes[8];
  std::memcpy(bytes, &v, 8);
  return fnv1a_bytes(bytes, 8, h);
}

inline std::uint64_t fnv1a_f64(double v,
                               std::uint64_t h = 0xcbf29ce484222325ull) {
  unsigned char bytes[8];
  std::memcpy(bytes, &v, 8);
  return fnv1a_bytes(bytes, 8, h);
}

}  // namespace fgn
