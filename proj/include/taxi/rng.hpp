#pragma once

#include <cstdint>

namespace taxi {

// Finalizing mixer from splitmix64. Bijective on 64-bit words.
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent child seed from a parent seed and a stream tag.
// Used everywhere a named sub-stream is needed (per minute, per agent, per
// trajectory) so that draws in one stream never shift another stream.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t tag) {
  return mix64(parent + 0x9e3779b97f4a7c15ULL * (tag + 1));
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a,
                                 std::uint64_t b) {
  return derive_seed(derive_seed(parent, a), b);
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t a,
                                 std::uint64_t b, std::uint64_t c) {
  return derive_seed(derive_seed(parent, a, b), c);
}

// splitmix64 engine. Chosen over std::mt19937_64 + std distributions because
// the standard distributions are implementation-defined: the same seed must
// reproduce the same episode on every platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return mix64(state_);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in {0, ..., n-1}. Modulo bias is below 2^-50 for the small n
  // used here and, more importantly, identical everywhere.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
};

}  // namespace taxi
