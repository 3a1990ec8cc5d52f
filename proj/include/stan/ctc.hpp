// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "stan/errors.hpp"
#include "stan/features.hpp"

namespace stan {

inline constexpr int kBlank = 0;

namespace detail {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace detail

// Frames needed to emit `labels`: one per symbol plus a separating blank
// between each pair of equal neighbours.
inline std::size_t ctc_min_frames(const LabelSequence& labels) {
  std::size_t need = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i)
    if (labels[i] == labels[i - 1]) ++need;
  return need;
}

inline bool ctc_feasible(const LabelSequence& labels, std::size_t frames) { return ctc_min_frames(labels) <= frames; }

template <typename Real>
struct CtcResult {
  double neg_log_likelihood = 0.0;
  Matrix<Real> logit_gradients;  // T x classes, d(NLL)/d(logits)
};

// CTC negative log-likelihood of `labels` under per-frame unnormalized scores
// `logits` (T x classes, class 0 = blank), by the alpha/beta recursions in log
// space. Gradients are with respect to the logits.
template <typename Real>
CtcResult<Real> ctc_loss(const Matrix<Real>& logits, const LabelSequence& labels) {
  const auto T = static_cast<std::size_t>(logits.rows());
  const auto C = static_cast<int>(logits.cols());
  require(T >= 1, ErrorKind::empty_sequence, "ctc_loss: zero frames");
  require(C >= 2, ErrorKind::dimension, "ctc_loss: need at least one class besides blank");
  for (int l : labels)
    require(l > kBlank && l < C, ErrorKind::input,
            "ctc_loss: label " + std::to_string(l) + " outside [1, " + std::to_string(C - 1) + "]");
  if (!ctc_feasible(labels, T))
    fail(ErrorKind::feasibility, "ctc_loss: " + std::to_string(labels.size()) + " labels need " +
                                     std::to_string(ctc_min_frames(labels)) + " frames, have " + std::to_string(T));
  if (!logits.allFinite()) fail(ErrorKind::numeric, "ctc_loss: non-finite logits");

  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  const std::size_t S = 2 * labels.size() + 1;
  std::vector<int> ext(S, kBlank);
  for (std::size_t i = 0; i < labels.size(); ++i) ext[2 * i + 1] = labels[i];

  // log-softmax per frame, in double
  Matrix<double> lp = logits.template cast<double>();
  for (std::size_t t = 0; t < T; ++t) {
    auto row = lp.row(static_cast<Eigen::Index>(t));
    const double top = row.maxCoeff();
    const double lse = top + std::log((row.array() - top).exp().sum());
    row.array() -= lse;
  }
  auto lpv = [&](std::size_t t, std::size_t s) {
    return lp(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(ext[s]));
  };
  auto skip_allowed = [&](std::size_t s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(T * S, kNegInf), beta(T * S, kNegInf);
  auto A = [&](std::size_t t, std::size_t s) -> double& { return alpha[t * S + s]; };
  auto Bt = [&](std::size_t t, std::size_t s) -> double& { return beta[t * S + s]; };

  A(0, 0) = lpv(0, 0);
  if (S > 1) A(0, 1) = lpv(0, 1);
  for (std::size_t t = 1; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      double acc = A(t - 1, s);
      if (s >= 1) acc = detail::log_add(acc, A(t - 1, s - 1));
      if (skip_allowed(s)) acc = detail::log_add(acc, A(t - 1, s - 2));
      if (acc != kNegInf) A(t, s) = acc + lpv(t, s);
    }

  Bt(T - 1, S - 1) = lpv(T - 1, S - 1);
  if (S > 1) Bt(T - 1, S - 2) = lpv(T - 1, S - 2);
  for (std::size_t t = T - 1; t-- > 0;)
    for (std::size_t s = 0; s < S; ++s) {
      double acc = Bt(t + 1, s);
      if (s + 1 < S) acc = detail::log_add(acc, Bt(t + 1, s + 1));
      if (s + 2 < S && skip_allowed(s + 2)) acc = detail::log_add(acc, Bt(t + 1, s + 2));
      if (acc != kNegInf) Bt(t, s) = acc + lpv(t, s);
    }

  double log_p = A(T - 1, S - 1);
  if (S > 1) log_p = detail::log_add(log_p, A(T - 1, S - 2));
  if (!std::isfinite(log_p)) fail(ErrorKind::numeric, "ctc_loss: zero-probability label sequence");

  CtcResult<Real> out;
  out.neg_log_likelihood = -log_p;
  Matrix<double> grad = lp.array().exp().matrix();  // softmax
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      const double ab = A(t, s) + Bt(t, s);
      if (ab == kNegInf) continue;
      grad(static_cast<Eigen::Index>(t), ext[s]) -= std::exp(ab - lpv(t, s) - log_p);
    }
  out.logit_gradients = grad.cast<Real>();
  return out;
}

// Best-path decoding: per-frame argmax (ties go to the lowest class index),
// collapse repeats, drop blanks.
template <typename Derived>
LabelSequence greedy_decode(const Eigen::MatrixBase<Derived>& logits) {
  LabelSequence out;
  int prev = -1;
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    int best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(t, c) > logits(t, best)) best = static_cast<int>(c);
    if (best != prev && best != kBlank) out.push_back(best);
    prev = best;
  }
  return out;
}

// Collapse a frame-level path (repeat merge, blank removal).
inline LabelSequence ctc_collapse(const std::vector<int>& path) {
  LabelSequence out;
  int prev = -1;
  for (int p : path) {
    if (p != prev && p != kBlank) out.push_back(p);
    prev = p;
  }
  return out;
}

}  // namespace stan
