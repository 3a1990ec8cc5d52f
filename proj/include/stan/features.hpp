// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstring>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "stan/errors.hpp"

namespace stan {

template <typename Real>
using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Class indices in [1, V]; 0 is the CTC blank and never appears in a label.
using LabelSequence = std::vector<int>;

// A T x D sequence of per-frame feature vectors, stored as 32-bit floats.
struct FeatureSequence {
  Matrix<float> frames;
  std::string id;

  FeatureSequence() = default;
  FeatureSequence(std::size_t length, std::size_t dim, std::string sample_id = {})
      : frames(Matrix<float>::Zero(static_cast<Eigen::Index>(length), static_cast<Eigen::Index>(dim))),
        id(std::move(sample_id)) {}

  std::size_t length() const { return static_cast<std::size_t>(frames.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(frames.cols()); }

  friend bool operator==(const FeatureSequence& a, const FeatureSequence& b) {
    return a.id == b.id && a.frames.rows() == b.frames.rows() && a.frames.cols() == b.frames.cols() &&
           (a.frames.size() == 0 ||
            std::memcmp(a.frames.data(), b.frames.data(), sizeof(float) * static_cast<std::size_t>(a.frames.size())) == 0);
  }
};

struct Sample {
  FeatureSequence features;
  LabelSequence labels;

  friend bool operator==(const Sample&, const Sample&) = default;
};

}  // namespace stan
