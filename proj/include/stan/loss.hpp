// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "stan/ctc.hpp"
#include "stan/model.hpp"

namespace stan {

template <typename Real>
struct BatchLoss {
  double mean_nll = 0.0;
  Matrix<Real> dlogits;  // (T*B) x classes, gradient of the mean
};

// Mean CTC NLL over the samples of a forward result. Padded rows get zero
// gradient.
template <typename Real>
BatchLoss<Real> batch_ctc_loss(const StanForwardResult<Real>& result, const std::vector<const LabelSequence*>& labels,
                               bool with_gradient = true) {
  require(labels.size() == result.batch, ErrorKind::input, "batch_ctc_loss: one label sequence per sample needed");
  BatchLoss<Real> out;
  if (with_gradient) out.dlogits = Matrix<Real>::Zero(result.logits.rows(), result.logits.cols());
  const double scale = 1.0 / static_cast<double>(result.batch);
  for (std::size_t b = 0; b < result.batch; ++b) {
    const std::size_t len = result.lengths[b];
    const auto rows = SensorBatch<Real>::sample_rows(result.logits, b, result.batch, len);
    const auto r = ctc_loss(rows, *labels[b]);
    out.mean_nll += r.neg_log_likelihood * scale;
    if (!with_gradient) continue;
    for (std::size_t t = 0; t < len; ++t)
      out.dlogits.row(static_cast<Eigen::Index>(t * result.batch + b)) =
          r.logit_gradients.row(static_cast<Eigen::Index>(t)) * static_cast<Real>(scale);
  }
  return out;
}

// Greedy transcription of every sample in a forward result.
template <typename Real>
std::vector<LabelSequence> decode_batch(const StanForwardResult<Real>& result) {
  std::vector<LabelSequence> out;
  for (std::size_t b = 0; b < result.batch; ++b)
    out.push_back(greedy_decode(SensorBatch<Real>::sample_rows(result.logits, b, result.batch, result.lengths[b])));
  return out;
}

}  // namespace stan
