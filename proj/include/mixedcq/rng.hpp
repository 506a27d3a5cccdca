#pragma once

#include <cmath>
#include <cstdint>

namespace mixedcq::num {

// Counter-based generator (splitmix64 over a keyed counter).  Every draw is a
// pure function of (seed, stream, counter), so sample loops can be reordered
// or parallelized without changing the values they see.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t bits(std::uint64_t stream, std::uint64_t counter) const {
    std::uint64_t z = seed_ ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    z += 0x9e3779b97f4a7c15ULL * (counter + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0,1).
  double uniform(std::uint64_t stream, std::uint64_t counter) const {
    return static_cast<double>(bits(stream, counter) >> 11) * 0x1.0p-53;
  }

  double uniform(std::uint64_t stream, std::uint64_t counter, double lo, double hi) const {
    return lo + (hi - lo) * uniform(stream, counter);
  }

  // Integer in [0, n).
  std::uint64_t index(std::uint64_t stream, std::uint64_t counter, std::uint64_t n) const {
    return n == 0 ? 0 : bits(stream, counter) % n;
  }

  // Standard normal via Box-Muller; consumes counters 2k and 2k+1.
  double normal(std::uint64_t stream, std::uint64_t counter) const {
    double u1 = uniform(stream, 2 * counter);
    double u2 = uniform(stream, 2 * counter + 1);
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

}  // namespace mixedcq::num
