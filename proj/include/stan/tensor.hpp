// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "stan/errors.hpp"
#include "stan/features.hpp"
#include "stan/rng.hpp"

namespace stan {

template <typename Real>
using MatrixMap = Eigen::Map<Matrix<Real>>;
template <typename Real>
using ConstMatrixMap = Eigen::Map<const Matrix<Real>>;

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

// Dense row-major tensor. Rank-1 tensors view as a 1 x n row; higher ranks view
// as shape[0] x (product of the remaining dims).
template <typename Real>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)), data_(element_count(shape_), Real(0)) {}

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::vector<Real>& values() { return data_; }
  const std::vector<Real>& values() const { return data_; }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  Eigen::Index rows() const { return shape_.size() <= 1 ? 1 : static_cast<Eigen::Index>(shape_[0]); }
  Eigen::Index cols() const {
    return shape_.empty() ? 1 : static_cast<Eigen::Index>(data_.size() / static_cast<std::size_t>(rows()));
  }

  MatrixMap<Real> matrix() { return MatrixMap<Real>(data_.data(), rows(), cols()); }
  ConstMatrixMap<Real> matrix() const { return ConstMatrixMap<Real>(data_.data(), rows(), cols()); }

  void set_zero() { std::fill(data_.begin(), data_.end(), Real(0)); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<Real> data_;
};

template <typename Real>
void check_finite(const Eigen::MatrixBase<Real>& m, const std::string& where) {
  if (!m.allFinite()) fail(ErrorKind::numeric, "non-finite value in " + where);
}

// Named parameter hierarchy ("sensor.0.attention.gru.W_z" etc.) with a gradient
// slot per parameter. Entries keep insertion order, which is also the
// serialization order.
template <typename Real>
class ParamTree {
 public:
  struct Entry {
    std::string name;
    Tensor<Real> value;
    Tensor<Real> grad;
  };

  Tensor<Real>& add(const std::string& name, std::vector<std::size_t> shape) {
    require(!index_.contains(name), ErrorKind::config, "duplicate parameter '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({name, Tensor<Real>(shape), Tensor<Real>(shape)});
    return entries_.back().value;
  }

  void add(const std::string& name, Tensor<Real> value) {
    add(name, value.shape()) = std::move(value);
  }

  bool contains(const std::string& name) const { return index_.contains(name); }

  Tensor<Real>& value(const std::string& name) { return entry(name).value; }
  const Tensor<Real>& value(const std::string& name) const { return entry(name).value; }
  Tensor<Real>& grad(const std::string& name) { return entry(name).grad; }
  const Tensor<Real>& grad(const std::string& name) const { return entry(name).grad; }

  Entry& entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::input, "no parameter named '" + name + "'");
    return entries_[it->second];
  }
  const Entry& entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) fail(ErrorKind::input, "no parameter named '" + name + "'");
    return entries_[it->second];
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  std::size_t size_with_prefix(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.name.starts_with(prefix)) n += e.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& e : entries_) e.grad.set_zero();
  }

  // Copy of every entry whose name starts with `prefix` (names unchanged).
  ParamTree subtree(const std::string& prefix) const {
    ParamTree out;
    for (const auto& e : entries_)
      if (e.name.starts_with(prefix)) out.add(e.name, e.value);
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Glorot-uniform matrices (+-sqrt(6 / (fan_in + fan_out))), zero biases.
template <typename Real>
void glorot_init(Tensor<Real>& t, std::size_t fan_in, std::size_t fan_out, Prng& prng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (auto& v : t.values()) v = static_cast<Real>(prng.uniform(-bound, bound));
}

}  // namespace stan
