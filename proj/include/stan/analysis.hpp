// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include "stan/errors.hpp"
#include "stan/model.hpp"

namespace stan {

// ---------------------------------------------------------------------------
// Attention / noise correlation

struct AttentionCorrelation {
  bool defined = false;
  double r = 0.0;
  std::optional<double> lag;  // median frames from noise crossover to attention crossover
  std::size_t crossovers = 0;
};

inline std::optional<double> pearson(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size(), ErrorKind::dimension, "pearson: length mismatch");
  const double n = static_cast<double>(x.size());
  if (x.size() < 2) return std::nullopt;
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

inline double median(std::vector<double> v) {
  require(!v.empty(), ErrorKind::input, "median of an empty set");
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// Pearson r of (sigma_1 - sigma_2) against (a_1 - a_2) over frames. A noise
// crossover is a frame where the noisier sensor changes; its lag is the
// distance to the first later frame where attention has moved off the newly
// noisier sensor.
inline AttentionCorrelation correlate_attention(const AttentionTrace& trace) {
  require(trace.sensors() == 2, ErrorKind::input, "correlate_attention needs a 2-sensor trace");
  const std::size_t T = trace.frames();
  std::vector<double> ds(T), da(T);
  for (std::size_t t = 0; t < T; ++t) {
    ds[t] = trace.sigma[0][t] - trace.sigma[1][t];
    da[t] = trace.weights[0][t] - trace.weights[1][t];
  }
  AttentionCorrelation out;
  if (const auto r = pearson(ds, da)) {
    out.defined = true;
    out.r = *r;
  }
  std::vector<double> lags;
  int prev = 0;
  for (std::size_t t = 0; t < T; ++t) {
    const int sign = ds[t] > 0 ? 1 : (ds[t] < 0 ? -1 : 0);
    if (sign == 0) continue;
    if (prev != 0 && sign != prev) {
      ++out.crossovers;
      // sign > 0: sensor 1 became noisier, attention should favour sensor 2.
      for (std::size_t u = t; u < T; ++u)
        if ((sign > 0 && da[u] < 0) || (sign < 0 && da[u] > 0)) {
          lags.push_back(static_cast<double>(u - t));
          break;
        }
    }
    prev = sign;
  }
  if (!lags.empty()) out.lag = median(lags);
  return out;
}

// A run of at least `min_frames` consecutive frames in which sensor `lower`
// has a noise level at least `min_gap` below every other sensor.
struct DominanceInterval {
  std::size_t lower = 0;
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  double mean_attention = 0.0;  // mean weight on `lower` over the run
};

inline std::vector<DominanceInterval> dominance_intervals(const AttentionTrace& trace, double min_gap,
                                                          std::size_t min_frames) {
  const std::size_t n = trace.sensors(), T = trace.frames();
  std::vector<DominanceInterval> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto dominant = [&](std::size_t t) {
      for (std::size_t k = 0; k < n; ++k)
        if (k != i && !(trace.sigma[k][t] - trace.sigma[i][t] >= min_gap)) return false;
      return true;
    };
    std::size_t t = 0;
    while (t < T) {
      if (!dominant(t)) {
        ++t;
        continue;
      }
      const std::size_t begin = t;
      while (t < T && dominant(t)) ++t;
      if (t - begin < min_frames) continue;
      DominanceInterval d{i, begin, t, 0.0};
      for (std::size_t u = begin; u < t; ++u) d.mean_attention += trace.weights[i][u];
      d.mean_attention /= static_cast<double>(t - begin);
      out.push_back(d);
    }
  }
  return out;
}

}  // namespace stan
