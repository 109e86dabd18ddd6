#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace splitnn {

// splitmix64. Chosen over std::mt19937 for byte-stable streams across
// standard library implementations; the client/server sides must draw
// identical values from the shared seed.
struct Rng {
  std::uint64_t state = 0;

  Rng() = default;
  explicit Rng(std::uint64_t seed) : state(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double next_double() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  std::uint64_t next_below(std::uint64_t n) { return n ? next_u64() % n : 0; }

  double normal() {
    // Box-Muller; 1-u keeps the log argument in (0, 1].
    double u1 = next_double();
    double u2 = next_double();
    double r = std::sqrt(-2.0 * std::log(1.0 - u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Centered Laplace with scale b via inverse CDF. The offset keeps
  // u strictly inside (-1/2, 1/2) so the log argument never hits zero.
  double laplace(double b) {
    if (b == 0.0) return 0.0;
    double u = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53 - 0.5;
    double s = u < 0.0 ? -1.0 : 1.0;
    return -b * s * std::log(1.0 - 2.0 * std::fabs(u));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i + 1));
      T tmp = v[i];
      v[i] = v[j];
      v[j] = tmp;
    }
  }
};

// Derives decorrelated stream seeds from one master seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a ^ (b * 0x9E3779B97F4A7C15ULL + 0x632BE59BD9B4E019ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace splitnn
