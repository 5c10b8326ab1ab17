#pragma once

// Deterministic pseudo-random source. State transition is xoshiro256++ seeded
// through SplitMix64; both are fixed integer recurrences, so equal seeds give
// bitwise-equal u64 sequences on every platform. Real-valued draws are simple
// documented transforms of those integers (53-bit uniforms, Box-Muller normals,
// Marsaglia-Tsang gammas) and are reproducible wherever libm is deterministic.

#include <array>
#include <cmath>
#include <cstdint>

#include "mixsig/errors.hpp"
#include "mixsig/linalg.hpp"

namespace mixsig {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace detail

// Mixes a base seed with a stream index into an independent child seed; used to
// hand each restart (or generated row block) its own stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t x = base ^ (0xD1B54A32D192ED03ULL * (stream + 1));
  detail::splitmix64(x);
  return detail::splitmix64(x);
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& word : state_) word = detail::splitmix64(x);
  }

  // xoshiro256++ step
  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  // [0, 1) with 53 random bits
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller, one value per call (no cached pair, keeps replay trivial)
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Marsaglia-Tsang; shape < 1 boosted through the shape+1 identity
  double gamma(double shape) {
    if (!(shape > 0.0)) throw Error("gamma: shape must be positive");
    if (shape < 1.0) {
      const double u = 1.0 - uniform01();  // (0, 1]
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  Vector dirichlet(const Vector& alpha) {
    Vector g(alpha.size());
    for (Eigen::Index c = 0; c < alpha.size(); ++c) g[c] = gamma(alpha[c]);
    const double total = g.sum();
    if (!(total > 0.0)) throw Error("dirichlet: degenerate gamma draws");
    return g / total;
  }

  // modulo reduction; bias is irrelevant at the 64-bit range and the mapping is
  // part of the determinism contract
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::array<std::uint64_t, 4> state_;
};

}  // namespace mixsig
