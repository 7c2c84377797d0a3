#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "patchalign/common.hpp"

namespace patchalign {

// mt19937_64 produces identical raw streams on every conforming
// implementation; the distribution mappings below are fixed here because
// the std:: distributions are not portable and checkpoints must be
// byte-identical across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  real uniform() { return static_cast<real>(next_u64() >> 11) * 0x1.0p-53; }

  real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; one value per call, no cached spare (keeps state minimal).
  real normal(real mean = 0.0, real stddev = 1.0) {
    real u1 = uniform();
    real u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    real z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    return mean + stddev * z;
  }

  // Uniform integer in [0, n). Rejection-free modulo bias is irrelevant at
  // the magnitudes used here (n << 2^32), but use the unbiased split anyway.
  int below(int n) {
    if (n <= 0) fail(ErrorKind::usage, "Rng::below requires n > 0");
    uint64_t bound = ~uint64_t{0} - (~uint64_t{0} % static_cast<uint64_t>(n));
    uint64_t x = next_u64();
    while (x >= bound) x = next_u64();
    return static_cast<int>(x % static_cast<uint64_t>(n));
  }

  // Derive an independent stream; used for per-instance dataset seeds so
  // generation order never matters.
  static uint64_t mix(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::string serialize() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void deserialize(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (is.fail()) fail(ErrorKind::checkpoint, "malformed RNG state");
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace patchalign
