#pragma once

#include <cmath>
#include <cstdint>

namespace mflq::rng {

// splitmix64 finalizer
inline std::uint64_t mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline double to_unit(std::uint64_t h) {
  // strictly inside (0, 1)
  return (static_cast<double>(h >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal draw addressed by (seed, path, step). Stateless, so
/// the stream is identical no matter how work is scheduled.
inline double standard_normal(std::uint64_t seed, std::uint64_t path,
                              std::uint64_t step) {
  const std::uint64_t h1 =
      mix(mix(mix(seed) ^ (path * 0xD1B54A32D192ED03ULL)) ^
          (step * 0x8CB92BA72F3D8DD7ULL));
  const std::uint64_t h2 = mix(h1 ^ 0x2545F4914F6CDD1DULL);
  const double u1 = to_unit(h1);
  const double u2 = to_unit(h2);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(6.283185307179586476925286766559 * u2);
}

}  // namespace mflq::rng
