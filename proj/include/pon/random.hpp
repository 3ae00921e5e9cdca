#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace pon {

// Deterministic sampling helpers on top of std::mt19937_64. The distribution
// adaptors in <random> are implementation-defined, so we draw raw bits
// ourselves; streams are then reproducible across standard libraries and can
// be serialized mid-stream.
using Rng = std::mt19937_64;

/// Uniform double in [0, 1) using the top 53 bits of one draw.
inline double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_range(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_unit(rng);
}

/// Uniform integer in [0, n). Rejection sampling, no modulo bias.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_below: n must be positive");
  // 2^64 mod n; accept draws below 2^64 - r so every residue is equally likely.
  const std::uint64_t r = (std::numeric_limits<std::uint64_t>::max() % n + 1) % n;
  if (r == 0) return rng() % n;
  const std::uint64_t threshold = std::uint64_t{0} - r;
  std::uint64_t x = rng();
  while (x >= threshold) x = rng();
  return x % n;
}

/// Standard normal via Box-Muller. Consumes exactly two uniforms per call and
/// caches nothing, so generator state between draws is the whole story.
inline double normal(Rng& rng) {
  constexpr double kTwoPi = 6.283185307179586476925287;
  const double u1 = 1.0 - uniform_unit(rng);  // (0, 1], keeps log finite
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

inline std::string rng_state_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng rng_from_state(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw std::invalid_argument("rng_from_state: malformed generator state");
  return rng;
}

}  // namespace pon
