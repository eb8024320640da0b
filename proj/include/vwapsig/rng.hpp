#pragma once

#include <cmath>
#include <cstdint>

namespace vwapsig {

// splitmix64 generator. Self-contained so streams are identical on every
// platform (std:: distributions are implementation-defined).
struct Rng {
  std::uint64_t state;
  bool has_spare = false;
  double spare = 0.0;

  explicit Rng(std::uint64_t seed) : state(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1) with 53 significant bits
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal() {
    if (has_spare) {
      has_spare = false;
      return spare;
    }
    double u1 = 0.0;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare = r * std::sin(a);
    has_spare = true;
    return r * std::cos(a);
  }

  double lognormal(double mu, double sigma) { return std::exp(mu + sigma * normal()); }

  // independent substream; stream index is mixed into the key
  Rng split(std::uint64_t stream) const {
    Rng r(state ^ (0xD1B54A32D192ED03ull * (stream + 1)));
    r.next_u64();
    return r;
  }
};

}  // namespace vwapsig
