#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mass {

// Seeded random stream with platform-stable draws. mt19937_64 output is
// pinned by the standard; the derived draws below avoid std::*_distribution,
// whose sequences are implementation-defined.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Unbiased uniform index in [0, n). n == 0 or 1 consumes no draw.
  std::size_t uniform_index(std::size_t n) {
    if (n <= 1) return 0;
    const std::uint64_t span = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return static_cast<std::size_t>(v % span);
  }

 private:
  std::mt19937_64 engine_;
};

namespace detail {
inline std::uint64_t fnv1a64(std::string_view text, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}
}  // namespace detail

// Child-seed derivation: independent streams per (label, index) so that
// candidates, repeats, and examples never share a stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view label, std::uint64_t index = 0) {
  std::uint64_t h = detail::fnv1a64(label);
  h ^= detail::splitmix64(base + 0x9e3779b97f4a7c15ull * (index + 1));
  return detail::splitmix64(h);
}

}  // namespace mass
