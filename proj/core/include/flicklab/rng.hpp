#pragma once

#include <cstdint>
#include <initializer_list>

namespace flicklab {

// splitmix64. Used everywhere a random stream or a derived sub-seed is
// needed: the output is identical on every platform, which is what makes
// seeded runs byte-reproducible.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1), 53 random bits.
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next() % span);
  }

 private:
  std::uint64_t state_;
};

// Stable seed derivation: folds each tag through a splitmix step so that
// per-clip / per-stream sub-seeds never collide with the parent stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  for (std::uint64_t tag : tags) {
    SplitMix64 m(seed ^ (tag + 0x9e3779b97f4a7c15ULL));
    seed = m.next();
  }
  return seed;
}

}  // namespace flicklab
