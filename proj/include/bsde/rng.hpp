#pragma once

// Counter-based random numbers (Philox4x32-10).
//
// Every draw is a pure function of (seed, stream, index_a, index_b, block), so
// any path or step can be regenerated in isolation and results do not depend
// on how work is split across threads.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace bsde {

/// Disjoint counter spaces for the different consumers of randomness.
enum class Stream : std::uint32_t {
  increments = 1,
  oracle = 2,
  init = 3,
};

class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;
  using Key = std::array<std::uint32_t, 2>;

  static constexpr Block generate(Block counter, Key key) {
    for (int round = 0; round < 10; ++round) {
      if (round > 0) {
        key[0] += kWeyl0;
        key[1] += kWeyl1;
      }
      const std::uint64_t p0 = std::uint64_t{kMul0} * counter[0];
      const std::uint64_t p1 = std::uint64_t{kMul1} * counter[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      counter = {hi1 ^ counter[1] ^ key[0], lo1, hi0 ^ counter[3] ^ key[1], lo0};
    }
    return counter;
  }

 private:
  static constexpr std::uint32_t kMul0 = 0xD2511F53;
  static constexpr std::uint32_t kMul1 = 0xCD9E8D57;
  static constexpr std::uint32_t kWeyl0 = 0x9E3779B9;
  static constexpr std::uint32_t kWeyl1 = 0xBB67AE85;
};

/// Uniform on the open interval (0, 1) from 64 random bits (52 used).
inline double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 12;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-52;
}

/// Fills `out` with standard normals keyed by (seed, stream, index_a, index_b).
/// index_a carries up to 56 bits (path or sample index), index_b 32 bits.
inline void fill_normals(std::uint64_t seed, Stream stream, std::uint64_t index_a,
                         std::uint32_t index_b, std::span<double> out) {
  const Philox4x32::Key key{static_cast<std::uint32_t>(seed),
                            static_cast<std::uint32_t>(seed >> 32)};
  const auto tag = static_cast<std::uint32_t>(stream) << 24;
  const auto a_lo = static_cast<std::uint32_t>(index_a);
  const auto a_hi = static_cast<std::uint32_t>(index_a >> 32) & 0x00FFFFFFu;
  std::size_t k = 0;
  for (std::uint32_t block = 0; k < out.size(); ++block) {
    const auto bits = Philox4x32::generate({block, index_b, a_lo, a_hi | tag}, key);
    const double u1 = to_open_unit(bits[0], bits[1]);
    const double u2 = to_open_unit(bits[2], bits[3]);
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    out[k++] = radius * std::cos(angle);
    if (k < out.size()) out[k++] = radius * std::sin(angle);
  }
}

/// SplitMix64 finalizer; used to derive independent seeds (e.g. evaluation).
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace bsde
