// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "stan/rng.hpp"
#include "stan/tensor.hpp"

namespace stan {

struct GradCheckFailure {
  std::string param;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
  std::vector<GradCheckFailure> failures;

  bool passed() const { return failures.empty(); }
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  // Per-tensor cap on checked elements; larger tensors are sampled.
  std::size_t max_per_tensor = 64;
  // Magnitude below which the error is measured in absolute terms.
  double floor = 1e-4;
  std::uint64_t seed = 0;
};

// Compares the analytic gradients already stored in `tree` against central
// differences of `loss`. The relative error of one element is
// |a - n| / max(|a|, |n|, floor).
inline GradCheckReport grad_check(ParamTree<double>& tree, const std::function<double()>& loss,
                                  const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  Prng prng = Prng::derive(opt.seed, {0x6772616463686bULL});
  for (auto& e : tree.entries()) {
    const std::size_t n = e.value.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (n > opt.max_per_tensor) {
      for (std::size_t i = 0; i < opt.max_per_tensor; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(prng.next_u64() % (n - i));
        std::swap(idx[i], idx[j]);
      }
      idx.resize(opt.max_per_tensor);
    }
    for (std::size_t i : idx) {
      double& w = e.value[i];
      const double saved = w;
      w = saved + opt.step;
      const double up = loss();
      w = saved - opt.step;
      const double down = loss();
      w = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double analytic = e.grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++report.checked;
      if (!(rel <= report.max_rel_error)) {
        report.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        report.worst_param = e.name;
      }
      if (!(rel < opt.tolerance)) report.failures.push_back({e.name, i, analytic, numeric, rel});
    }
  }
  return report;
}

}  // namespace stan
