// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <string_view>

#include "stan/errors.hpp"

namespace stan {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// PCG32 (XSH-RR output permutation over a 64-bit LCG state, O'Neill 2014).
// Streams are selected through the LCG increment, so two generators with the
// same seed but different stream ids produce unrelated sequences. All
// distributions below are written out explicitly so that a given
// (seed, stream) yields the same draws on every conforming platform.
class Prng {
 public:
  static constexpr std::string_view algorithm = "pcg32-xsh-rr";

  explicit Prng(std::uint64_t seed = 0, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {
    inc_ = (stream << 1u) | 1u;
    state_ = 0;
    next_u32();
    state_ += seed;
    next_u32();
  }

  // Child generator for a path of identifiers, e.g. (purpose, epoch, sample, sensor).
  // The path is folded into a single stream id; the seed is kept for provenance.
  static Prng derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) {
    std::uint64_t h = splitmix64(seed ^ 0x5354414E5354414EULL);
    for (std::uint64_t id : path) h = splitmix64(h ^ splitmix64(id + 0x632BE59BD9B4E019ULL));
    return Prng(splitmix64(seed + h), h);
  }

  Prng split(std::uint64_t stream_id) const { return derive(seed_, {stream_, stream_id}); }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  std::uint32_t next_u32() {
    const std::uint64_t old = state_;
    state_ = old * 6364136223846793005ULL + inc_;
    const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
    const auto rot = static_cast<std::uint32_t>(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32u) | next_u32();
  }

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11u) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via the Marsaglia polar method; the second variate of each
  // accepted pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 0.0, v = 0.0, s = 0.0;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  // Gamma(shape, scale) by Marsaglia & Tsang (2000); shape < 1 is boosted as
  // Gamma(shape + 1) * U^(1/shape).
  double gamma(double shape, double scale) {
    require(shape > 0.0 && scale > 0.0 && std::isfinite(shape) && std::isfinite(scale), ErrorKind::config,
            "gamma parameters must be positive");
    if (shape < 1.0) {
      const double boost = std::pow(1.0 - uniform(), 1.0 / shape);
      return gamma(shape + 1.0, scale) * boost;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = 0.0, v = 0.0;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      const double x2 = x * x;
      if (u < 1.0 - 0.0331 * x2 * x2) return d * v * scale;
      if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
  }

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 1;
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline double sample_gamma(Prng& prng, double shape, double scale) { return prng.gamma(shape, scale); }

// Stream purposes; every stochastic consumer derives its generator from
// (seed, purpose, ...) so that streams never collide across purposes.
namespace stream {
inline constexpr std::uint64_t corpus_train = 1;
inline constexpr std::uint64_t corpus_test = 2;
inline constexpr std::uint64_t corpus_signature = 3;
inline constexpr std::uint64_t init = 4;
inline constexpr std::uint64_t shuffle = 5;
inline constexpr std::uint64_t train_noise = 6;
inline constexpr std::uint64_t valid_noise = 7;
inline constexpr std::uint64_t eval_noise = 8;
inline constexpr std::uint64_t preview = 9;
}  // namespace stream

}  // namespace stan
