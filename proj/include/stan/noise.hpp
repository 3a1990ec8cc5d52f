// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "stan/errors.hpp"
#include "stan/features.hpp"
#include "stan/rng.hpp"

namespace stan {

// Triangular-wave reflection of `a` into [0, sigma_max]:
//   sigma_max - |mod(a, 2 sigma_max) - sigma_max|, with floor-based mod.
inline double reflect(double a, double sigma_max) {
  require(sigma_max > 0.0 && std::isfinite(sigma_max), ErrorKind::config, "reflect: sigma_max must be positive");
  const double period = 2.0 * sigma_max;
  double m = a - period * std::floor(a / period);
  // floor() can leave m == period for tiny negative a; fold it back.
  if (m >= period) m -= period;
  if (m < 0.0) m = 0.0;
  return sigma_max - std::abs(m - sigma_max);
}

struct WalkConfig {
  double sigma_max = 3.0;
  double gamma_shape = 0.8;
  double gamma_scale = 0.2;
  double sigma0_upper = 1.5;

  static WalkConfig with_sigma_max(double sigma_max, double shape = 0.8, double scale = 0.2) {
    return {sigma_max, shape, scale, sigma_max / 2.0};
  }

  void validate() const {
    require(sigma_max > 0.0, ErrorKind::config, "walk: sigma_max must be > 0");
    require(gamma_shape > 0.0, ErrorKind::config, "walk: gamma shape must be > 0");
    require(gamma_scale > 0.0, ErrorKind::config, "walk: gamma scale must be > 0");
    require(sigma0_upper >= 0.0 && sigma0_upper <= sigma_max, ErrorKind::config,
            "walk: sigma0 upper bound must lie in [0, sigma_max]");
  }
};

struct NoiseSchedule {
  std::vector<double> sigma;
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;

  std::size_t length() const { return sigma.size(); }

  static NoiseSchedule zeros(std::size_t length) { return {std::vector<double>(length, 0.0), 0, 0}; }
};

// Bounded random walk: sigma(t) = reflect(sigma0 + sum_{i<=t} sgn(s_i) n_i),
// sigma0 ~ U(0, sigma0_upper), s_i ~ U(-1, 1), n_i ~ Gamma(k, theta).
// sgn(0) is taken as +1. `raw_walk`, when given, receives the unreflected sums.
inline NoiseSchedule walk_schedule(Prng& prng, const WalkConfig& config, std::size_t length,
                                   std::vector<double>* raw_walk = nullptr) {
  config.validate();
  require(length >= 1, ErrorKind::empty_sequence, "walk_schedule: length must be >= 1");
  NoiseSchedule out;
  out.seed = prng.seed();
  out.stream_id = prng.stream();
  out.sigma.resize(length);
  const double sigma0 = prng.uniform(0.0, config.sigma0_upper);
  double walk = sigma0;
  if (raw_walk) raw_walk->assign(1, walk);
  out.sigma[0] = reflect(walk, config.sigma_max);
  for (std::size_t t = 1; t < length; ++t) {
    const double s = prng.uniform(-1.0, 1.0);
    const double n = prng.gamma(config.gamma_shape, config.gamma_scale);
    walk += (s >= 0.0 ? n : -n);
    out.sigma[t] = reflect(walk, config.sigma_max);
    if (raw_walk) raw_walk->push_back(walk);
  }
  return out;
}

// Returns a corrupted copy: x[t][k] + N(0, sigma(t)^2), one independent draw per
// element. Noise is drawn in double precision and rounded once when mixed.
inline FeatureSequence apply_noise(Prng& prng, const FeatureSequence& x, const NoiseSchedule& schedule) {
  require(schedule.length() == x.length(), ErrorKind::dimension,
          "apply_noise: schedule length " + std::to_string(schedule.length()) + " != sequence length " +
              std::to_string(x.length()));
  FeatureSequence out = x;
  const auto dim = x.frames.cols();
  for (Eigen::Index t = 0; t < x.frames.rows(); ++t) {
    const double sigma = schedule.sigma[static_cast<std::size_t>(t)];
    if (sigma == 0.0) continue;
    for (Eigen::Index k = 0; k < dim; ++k) {
      out.frames(t, k) = static_cast<float>(static_cast<double>(x.frames(t, k)) + sigma * prng.normal());
    }
  }
  return out;
}

enum class NoiseKind { random_walk, linear_sweep, burst, sinusoid, constant };

inline const char* to_string(NoiseKind kind) {
  switch (kind) {
    case NoiseKind::random_walk: return "random_walk";
    case NoiseKind::linear_sweep: return "linear_sweep";
    case NoiseKind::burst: return "burst";
    case NoiseKind::sinusoid: return "sinusoid";
    case NoiseKind::constant: return "constant";
  }
  return "?";
}

inline NoiseKind noise_kind_from_string(const std::string& name) {
  if (name == "random_walk") return NoiseKind::random_walk;
  if (name == "linear_sweep" || name == "sweep") return NoiseKind::linear_sweep;
  if (name == "burst") return NoiseKind::burst;
  if (name == "sinusoid") return NoiseKind::sinusoid;
  if (name == "constant") return NoiseKind::constant;
  fail(ErrorKind::config, "unknown noise profile kind '" + name + "'");
}

// Fixed evaluation profiles. Levels are in feature-std units and are clamped
// to [0, sigma_max]. Frame parameters are absolute frame indices.
struct NoiseProfileSpec {
  NoiseKind kind = NoiseKind::constant;
  double sigma_max = 3.0;
  // linear_sweep: level goes from `start` at frame 0 to `end` at the last frame.
  double start = 0.0;
  double end = 3.0;
  // burst: `level` inside [onset, onset + duration), `base` elsewhere.
  double onset = 50.0;
  double duration = 50.0;
  double level = 3.0;
  double base = 0.0;
  // sinusoid: offset + amplitude * sin(2 pi t / period + phase).
  double amplitude = 1.5;
  double offset = 1.5;
  double period = 100.0;
  double phase = 0.0;

  static NoiseProfileSpec sweep(double from, double to) {
    NoiseProfileSpec s;
    s.kind = NoiseKind::linear_sweep;
    s.start = from;
    s.end = to;
    return s;
  }
  static NoiseProfileSpec make_burst(double onset, double duration, double level, double base = 0.0) {
    NoiseProfileSpec s;
    s.kind = NoiseKind::burst;
    s.onset = onset;
    s.duration = duration;
    s.level = level;
    s.base = base;
    return s;
  }
  static NoiseProfileSpec make_sinusoid(double amplitude, double offset, double period, double phase = 0.0) {
    NoiseProfileSpec s;
    s.kind = NoiseKind::sinusoid;
    s.amplitude = amplitude;
    s.offset = offset;
    s.period = period;
    s.phase = phase;
    return s;
  }
  static NoiseProfileSpec make_constant(double level) {
    NoiseProfileSpec s;
    s.kind = NoiseKind::constant;
    s.level = level;
    return s;
  }
};

inline NoiseSchedule profile_schedule(const NoiseProfileSpec& spec, std::size_t length) {
  require(length >= 1, ErrorKind::empty_sequence, "profile_schedule: length must be >= 1");
  require(spec.sigma_max >= 0.0, ErrorKind::config, "profile_schedule: sigma_max must be >= 0");
  NoiseSchedule out;
  out.sigma.resize(length);
  const auto clamp = [&](double v) { return std::clamp(v, 0.0, spec.sigma_max); };
  for (std::size_t t = 0; t < length; ++t) {
    const double tf = static_cast<double>(t);
    double v = 0.0;
    switch (spec.kind) {
      case NoiseKind::linear_sweep:
        v = length == 1 ? spec.start : spec.start + (spec.end - spec.start) * tf / static_cast<double>(length - 1);
        break;
      case NoiseKind::burst:
        v = (tf >= spec.onset && tf < spec.onset + spec.duration) ? spec.level : spec.base;
        break;
      case NoiseKind::sinusoid:
        require(spec.period > 0.0, ErrorKind::config, "sinusoid period must be > 0");
        v = spec.offset + spec.amplitude * std::sin(2.0 * std::numbers::pi * tf / spec.period + spec.phase);
        break;
      case NoiseKind::constant:
        v = spec.level;
        break;
      case NoiseKind::random_walk:
        fail(ErrorKind::config, "random_walk profiles are stochastic; use make_schedule with a generator");
    }
    out.sigma[t] = clamp(v);
  }
  return out;
}

// Any profile kind, including the stochastic walk. A zero sigma_max walk is the
// degenerate all-zero schedule.
inline NoiseSchedule make_schedule(const NoiseProfileSpec& spec, const WalkConfig& walk, Prng& prng,
                                   std::size_t length) {
  if (spec.kind != NoiseKind::random_walk) return profile_schedule(spec, length);
  require(length >= 1, ErrorKind::empty_sequence, "schedule length must be >= 1");
  if (walk.sigma_max == 0.0) return NoiseSchedule::zeros(length);
  return walk_schedule(prng, walk, length);
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_schedule_csv(std::ostream& os, const NoiseSchedule& schedule) {
  os << "frame,sigma\n";
  for (std::size_t t = 0; t < schedule.length(); ++t) os << t << ',' << format_real(schedule.sigma[t]) << '\n';
}

}  // namespace stan
