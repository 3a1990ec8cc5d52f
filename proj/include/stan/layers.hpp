// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "stan/errors.hpp"
#include "stan/rng.hpp"
#include "stan/tensor.hpp"

namespace stan {

// Declared parameter: shape plus the fans used by Glorot initialization.
struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
  bool is_bias = false;
};

template <typename Real>
ParamTree<Real> init_params(const std::vector<ParamSpec>& specs, Prng& prng) {
  ParamTree<Real> tree;
  for (const auto& s : specs) {
    auto& t = tree.add(s.name, s.shape);
    if (!s.is_bias) glorot_init(t, s.fan_in, s.fan_out, prng);
  }
  return tree;
}

inline std::size_t count_params(const std::vector<ParamSpec>& specs) {
  std::size_t n = 0;
  for (const auto& s : specs) n += Tensor<float>::element_count(s.shape);
  return n;
}

// Per-row validity mask over a frame-major (T*B) batch; empty means all valid.
template <typename Real>
using FrameMask = Eigen::Array<Real, Eigen::Dynamic, 1>;

namespace detail {

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& a) {
  using Real = typename Derived::Scalar;
  return Real(1) / (Real(1) + (-a).exp());
}

template <typename Real>
void add_bias(Matrix<Real>& m, const Tensor<Real>& b) {
  m.rowwise() += b.matrix().row(0);
}

template <typename Real>
void accumulate_bias_grad(Tensor<Real>& db, const Matrix<Real>& d) {
  db.matrix().row(0) += d.colwise().sum();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// softmax

template <typename Real>
std::vector<Real> softmax(std::span<const Real> scores) {
  require(!scores.empty(), ErrorKind::empty_sequence, "softmax over zero scores");
  for (Real v : scores) require(std::isfinite(v), ErrorKind::numeric, "softmax: non-finite score");
  const Real top = *std::max_element(scores.begin(), scores.end());
  std::vector<Real> out(scores.size());
  Real total = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] - top);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

// Row-wise softmax of a (rows x N) score matrix.
template <typename Real>
Matrix<Real> softmax_rows(const Matrix<Real>& scores) {
  check_finite(scores, "softmax scores");
  Matrix<Real> out = (scores.colwise() - scores.rowwise().maxCoeff()).array().exp().matrix();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

// d(loss)/d(scores) given the softmax output and d(loss)/d(weights), row-wise.
template <typename Real>
Matrix<Real> softmax_rows_backward(const Matrix<Real>& weights, const Matrix<Real>& dweights) {
  const auto inner = (weights.array() * dweights.array()).rowwise().sum();
  return (weights.array() * (dweights.array().colwise() - inner)).matrix();
}

// ---------------------------------------------------------------------------
// dense: y = act(x W + b), per frame

enum class Activation { identity, tanh };

template <typename Real>
struct DenseCache {
  Matrix<Real> x;
  Matrix<Real> y;
};

struct DenseLayer {
  std::string prefix;
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::identity;

  void declare(std::vector<ParamSpec>& specs) const {
    specs.push_back({prefix + ".W", {in_dim, out_dim}, in_dim, out_dim, false});
    specs.push_back({prefix + ".b", {out_dim}, 0, 0, true});
  }

  template <typename Real>
  Matrix<Real> forward(const ParamTree<Real>& tree, const Matrix<Real>& x, DenseCache<Real>* cache = nullptr) const {
    require(static_cast<std::size_t>(x.cols()) == in_dim, ErrorKind::dimension,
            prefix + ": input has " + std::to_string(x.cols()) + " columns, expected " + std::to_string(in_dim));
    Matrix<Real> y = x * tree.value(prefix + ".W").matrix();
    detail::add_bias(y, tree.value(prefix + ".b"));
    if (activation == Activation::tanh) y = y.array().tanh().matrix();
    if (cache) {
      cache->x = x;
      cache->y = y;
    }
    return y;
  }

  template <typename Real>
  Matrix<Real> backward(ParamTree<Real>& tree, const DenseCache<Real>& cache, const Matrix<Real>& dy) const {
    Matrix<Real> da = dy;
    if (activation == Activation::tanh) da.array() *= (Real(1) - cache.y.array().square());
    tree.grad(prefix + ".W").matrix().noalias() += cache.x.transpose() * da;
    detail::accumulate_bias_grad(tree.grad(prefix + ".b"), da);
    return da * tree.value(prefix + ".W").matrix().transpose();
  }
};

template <typename Real>
Matrix<Real> dense_forward(const ParamTree<Real>& tree, const std::string& prefix, const Matrix<Real>& x,
                           Activation act) {
  const auto& w = tree.value(prefix + ".W");
  require(w.shape().size() == 2, ErrorKind::dimension, prefix + ".W must be a matrix");
  DenseLayer layer{prefix, w.shape()[0], w.shape()[1], act};
  require(tree.value(prefix + ".b").size() == layer.out_dim, ErrorKind::dimension, prefix + ".b size mismatch");
  return layer.forward(tree, x);
}

// ---------------------------------------------------------------------------
// GRU
//
//   z  = sigmoid(x W_z + h U_z + b_z)
//   r  = sigmoid(x W_r + h U_r + b_r)
//   reset_before: c = tanh(x W_h + (r . h) U_h + b_h)
//   reset_after:  c = tanh(x W_h + b_h + r . (h U_h + b_hh))
//   h' = (1 - z) . h + z . c

enum class GruVariant { reset_before, reset_after };

inline const char* to_string(GruVariant v) { return v == GruVariant::reset_after ? "reset_after" : "reset_before"; }

inline GruVariant gru_variant_from_string(const std::string& s) {
  if (s == "reset_after") return GruVariant::reset_after;
  if (s == "reset_before") return GruVariant::reset_before;
  fail(ErrorKind::config, "unknown GRU variant '" + s + "'");
}

// Parameters of one GRU cell: 3 input matrices, 3 recurrent matrices, and 3
// (reset_before) or 4 (reset_after) bias vectors.
inline std::size_t gru_param_count(std::size_t in_dim, std::size_t hidden, GruVariant v) {
  return 3 * (in_dim * hidden + hidden * hidden + hidden) + (v == GruVariant::reset_after ? hidden : 0);
}

template <typename Real>
struct GruStepGates {
  Matrix<Real> z, r, candidate;
};

template <typename Real>
struct GruCache {
  std::size_t frames = 0, batch = 0;
  Matrix<Real> x, h_prev, z, r, c, u;
  FrameMask<Real> mask;
};

struct GruLayer {
  std::string prefix;
  std::size_t in_dim = 0;
  std::size_t hidden = 0;
  GruVariant variant = GruVariant::reset_after;
  bool reverse = false;

  void declare(std::vector<ParamSpec>& specs) const {
    for (const char* g : {"z", "r", "h"}) specs.push_back({prefix + ".W_" + g, {in_dim, hidden}, in_dim, hidden, false});
    for (const char* g : {"z", "r", "h"}) specs.push_back({prefix + ".U_" + g, {hidden, hidden}, hidden, hidden, false});
    for (const char* g : {"z", "r", "h"}) specs.push_back({prefix + ".b_" + g, {hidden}, 0, 0, true});
    if (variant == GruVariant::reset_after) specs.push_back({prefix + ".b_hh", {hidden}, 0, 0, true});
  }

  template <typename Real>
  Matrix<Real> step(const ParamTree<Real>& tree, const Matrix<Real>& x_t, const Matrix<Real>& h_prev,
                    GruStepGates<Real>* gates = nullptr) const {
    require(static_cast<std::size_t>(x_t.cols()) == in_dim && static_cast<std::size_t>(h_prev.cols()) == hidden &&
                x_t.rows() == h_prev.rows(),
            ErrorKind::dimension, prefix + ": gru_step shape mismatch");
    Matrix<Real> xz = x_t * p(tree, "W_z"), xr = x_t * p(tree, "W_r"), xh = x_t * p(tree, "W_h");
    detail::add_bias(xz, tree.value(prefix + ".b_z"));
    detail::add_bias(xr, tree.value(prefix + ".b_r"));
    detail::add_bias(xh, tree.value(prefix + ".b_h"));
    Matrix<Real> z, r, c, u;
    Matrix<Real> h = cell(tree, xz, xr, xh, h_prev, z, r, c, u);
    if (gates) *gates = {z, r, c};
    return h;
  }

  // x is frame-major (T*B) x in_dim; returns (T*B) x hidden. Frames with mask 0
  // carry the previous state through unchanged.
  template <typename Real>
  Matrix<Real> forward(const ParamTree<Real>& tree, const Matrix<Real>& x, std::size_t frames, std::size_t batch,
                       const FrameMask<Real>& mask, GruCache<Real>* cache = nullptr) const {
    require(frames >= 1, ErrorKind::empty_sequence, prefix + ": zero-length sequence");
    require(static_cast<std::size_t>(x.rows()) == frames * batch && static_cast<std::size_t>(x.cols()) == in_dim,
            ErrorKind::dimension,
            prefix + ": input is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) + ", expected " +
                std::to_string(frames * batch) + "x" + std::to_string(in_dim));
    const auto B = static_cast<Eigen::Index>(batch);
    const auto H = static_cast<Eigen::Index>(hidden);
    const bool masked = mask.size() > 0;
    Matrix<Real> xz = x * p(tree, "W_z"), xr = x * p(tree, "W_r"), xh = x * p(tree, "W_h");
    detail::add_bias(xz, tree.value(prefix + ".b_z"));
    detail::add_bias(xr, tree.value(prefix + ".b_r"));
    detail::add_bias(xh, tree.value(prefix + ".b_h"));

    Matrix<Real> out(x.rows(), H);
    if (cache) {
      cache->frames = frames;
      cache->batch = batch;
      cache->x = x;
      cache->mask = mask;
      cache->h_prev.resize(x.rows(), H);
      cache->z.resize(x.rows(), H);
      cache->r.resize(x.rows(), H);
      cache->c.resize(x.rows(), H);
      if (variant == GruVariant::reset_after) cache->u.resize(x.rows(), H);
    }
    Matrix<Real> h = Matrix<Real>::Zero(B, H);
    Matrix<Real> z, r, c, u;
    for (std::size_t s = 0; s < frames; ++s) {
      const auto t = static_cast<Eigen::Index>(reverse ? frames - 1 - s : s);
      const Eigen::Index row = t * B;
      Matrix<Real> hn = cell(tree, xz.middleRows(row, B), xr.middleRows(row, B), xh.middleRows(row, B), h, z, r, c, u);
      if (masked) {
        const auto m = mask.segment(row, B);
        hn = (hn.array().colwise() * m + h.array().colwise() * (Real(1) - m)).matrix();
      }
      if (cache) {
        cache->h_prev.middleRows(row, B) = h;
        cache->z.middleRows(row, B) = z;
        cache->r.middleRows(row, B) = r;
        cache->c.middleRows(row, B) = c;
        if (variant == GruVariant::reset_after) cache->u.middleRows(row, B) = u;
      }
      h = std::move(hn);
      out.middleRows(row, B) = h;
    }
    return out;
  }

  // Accumulates parameter gradients; returns d(loss)/dx.
  template <typename Real>
  Matrix<Real> backward(ParamTree<Real>& tree, const GruCache<Real>& cache, const Matrix<Real>& dout) const {
    const std::size_t frames = cache.frames;
    const auto B = static_cast<Eigen::Index>(cache.batch);
    const auto H = static_cast<Eigen::Index>(hidden);
    const Eigen::Index rows = cache.x.rows();
    const bool masked = cache.mask.size() > 0;
    const auto Uz = p(tree, "U_z"), Ur = p(tree, "U_r"), Uh = p(tree, "U_h");

    Matrix<Real> da_z(rows, H), da_r(rows, H), da_h(rows, H);
    Matrix<Real> du;
    if (variant == GruVariant::reset_after) du.resize(rows, H);
    Matrix<Real> dh = Matrix<Real>::Zero(B, H);
    for (std::size_t s = frames; s-- > 0;) {
      const auto t = static_cast<Eigen::Index>(reverse ? frames - 1 - s : s);
      const Eigen::Index row = t * B;
      dh += dout.middleRows(row, B);
      Matrix<Real> carry;
      if (masked) {
        const auto m = cache.mask.segment(row, B);
        carry = (dh.array().colwise() * (Real(1) - m)).matrix();
        dh = (dh.array().colwise() * m).matrix();
      }
      const auto hp = cache.h_prev.middleRows(row, B).array();
      const auto z = cache.z.middleRows(row, B).array();
      const auto r = cache.r.middleRows(row, B).array();
      const auto c = cache.c.middleRows(row, B).array();

      Matrix<Real> dhp = (dh.array() * (Real(1) - z)).matrix();
      const auto dz = dh.array() * (c - hp);
      da_h.middleRows(row, B) = (dh.array() * z * (Real(1) - c.square())).matrix();
      Matrix<Real> dr;
      if (variant == GruVariant::reset_before) {
        Matrix<Real> drh = da_h.middleRows(row, B) * Uh.transpose();
        dr = (drh.array() * hp).matrix();
        dhp.array() += drh.array() * r;
      } else {
        const auto u = cache.u.middleRows(row, B).array();
        dr = (da_h.middleRows(row, B).array() * u).matrix();
        du.middleRows(row, B) = (da_h.middleRows(row, B).array() * r).matrix();
        dhp.noalias() += du.middleRows(row, B) * Uh.transpose();
      }
      da_z.middleRows(row, B) = (dz * z * (Real(1) - z)).matrix();
      da_r.middleRows(row, B) = (dr.array() * r * (Real(1) - r)).matrix();
      dhp.noalias() += da_z.middleRows(row, B) * Uz.transpose();
      dhp.noalias() += da_r.middleRows(row, B) * Ur.transpose();
      dh = masked ? Matrix<Real>(dhp + carry) : dhp;
    }

    g(tree, "W_z").noalias() += cache.x.transpose() * da_z;
    g(tree, "W_r").noalias() += cache.x.transpose() * da_r;
    g(tree, "W_h").noalias() += cache.x.transpose() * da_h;
    g(tree, "U_z").noalias() += cache.h_prev.transpose() * da_z;
    g(tree, "U_r").noalias() += cache.h_prev.transpose() * da_r;
    if (variant == GruVariant::reset_before) {
      g(tree, "U_h").noalias() += (cache.r.array() * cache.h_prev.array()).matrix().transpose() * da_h;
    } else {
      g(tree, "U_h").noalias() += cache.h_prev.transpose() * du;
      detail::accumulate_bias_grad(tree.grad(prefix + ".b_hh"), du);
    }
    detail::accumulate_bias_grad(tree.grad(prefix + ".b_z"), da_z);
    detail::accumulate_bias_grad(tree.grad(prefix + ".b_r"), da_r);
    detail::accumulate_bias_grad(tree.grad(prefix + ".b_h"), da_h);

    Matrix<Real> dx = da_z * p(tree, "W_z").transpose();
    dx.noalias() += da_r * p(tree, "W_r").transpose();
    dx.noalias() += da_h * p(tree, "W_h").transpose();
    return dx;
  }

 private:
  template <typename Real>
  ConstMatrixMap<Real> p(const ParamTree<Real>& tree, const char* name) const {
    return tree.value(prefix + "." + name).matrix();
  }
  template <typename Real>
  MatrixMap<Real> g(ParamTree<Real>& tree, const char* name) const {
    return tree.grad(prefix + "." + name).matrix();
  }

  // One step given precomputed input projections (biases b_z, b_r, b_h included).
  template <typename Real, typename XZ, typename XR, typename XH>
  Matrix<Real> cell(const ParamTree<Real>& tree, const XZ& xz, const XR& xr, const XH& xh, const Matrix<Real>& h,
                    Matrix<Real>& z, Matrix<Real>& r, Matrix<Real>& c, Matrix<Real>& u) const {
    z = detail::sigmoid((xz + h * p(tree, "U_z")).array()).matrix();
    r = detail::sigmoid((xr + h * p(tree, "U_r")).array()).matrix();
    if (variant == GruVariant::reset_before) {
      Matrix<Real> rh = (r.array() * h.array()).matrix();
      c = (xh + rh * p(tree, "U_h")).array().tanh().matrix();
    } else {
      u = h * p(tree, "U_h");
      detail::add_bias(u, tree.value(prefix + ".b_hh"));
      c = (xh.array() + r.array() * u.array()).tanh().matrix();
    }
    return (h.array() + z.array() * (c.array() - h.array())).matrix();
  }
};

template <typename Real>
Matrix<Real> gru_step(const ParamTree<Real>& tree, const std::string& prefix, GruVariant variant,
                      const Matrix<Real>& x_t, const Matrix<Real>& h_prev, GruStepGates<Real>* gates = nullptr) {
  const auto& w = tree.value(prefix + ".W_z");
  require(w.shape().size() == 2, ErrorKind::dimension, prefix + ".W_z must be a matrix");
  GruLayer layer{prefix, w.shape()[0], w.shape()[1], variant, false};
  return layer.step(tree, x_t, h_prev, gates);
}

// ---------------------------------------------------------------------------
// Stacked (optionally bidirectional) GRU. Bidirectional layers emit
// [forward | backward] per frame.

template <typename Real>
struct RnnCache {
  std::vector<GruCache<Real>> fwd, bwd;
};

struct RnnStack {
  std::string prefix;
  std::size_t in_dim = 0;
  std::vector<std::size_t> hidden;
  bool bidirectional = false;
  GruVariant variant = GruVariant::reset_after;

  std::size_t out_dim() const {
    if (hidden.empty()) return in_dim;
    return hidden.back() * (bidirectional ? 2 : 1);
  }

  std::vector<GruLayer> layers(bool backward_direction) const {
    std::vector<GruLayer> out;
    std::size_t d = in_dim;
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      const std::string base = prefix + ".gru" + std::to_string(i);
      if (bidirectional)
        out.push_back({base + (backward_direction ? ".bwd" : ".fwd"), d, hidden[i], variant, backward_direction});
      else
        out.push_back({base, d, hidden[i], variant, false});
      d = hidden[i] * (bidirectional ? 2 : 1);
    }
    return out;
  }

  void declare(std::vector<ParamSpec>& specs) const {
    const auto f = layers(false);
    const auto b = bidirectional ? layers(true) : std::vector<GruLayer>{};
    for (std::size_t i = 0; i < f.size(); ++i) {
      f[i].declare(specs);
      if (bidirectional) b[i].declare(specs);
    }
  }

  template <typename Real>
  Matrix<Real> forward(const ParamTree<Real>& tree, const Matrix<Real>& x, std::size_t frames, std::size_t batch,
                       const FrameMask<Real>& mask, RnnCache<Real>* cache = nullptr) const {
    require(frames >= 1, ErrorKind::empty_sequence, prefix + ": zero-length sequence");
    const auto f = layers(false);
    const auto b = bidirectional ? layers(true) : std::vector<GruLayer>{};
    if (cache) {
      cache->fwd.assign(f.size(), {});
      cache->bwd.assign(b.size(), {});
    }
    Matrix<Real> h = x;
    for (std::size_t i = 0; i < f.size(); ++i) {
      Matrix<Real> hf = f[i].forward(tree, h, frames, batch, mask, cache ? &cache->fwd[i] : nullptr);
      if (!bidirectional) {
        h = std::move(hf);
        continue;
      }
      Matrix<Real> hb = b[i].forward(tree, h, frames, batch, mask, cache ? &cache->bwd[i] : nullptr);
      Matrix<Real> both(hf.rows(), hf.cols() + hb.cols());
      both << hf, hb;
      h = std::move(both);
    }
    return h;
  }

  template <typename Real>
  Matrix<Real> backward(ParamTree<Real>& tree, const RnnCache<Real>& cache, const Matrix<Real>& dout) const {
    const auto f = layers(false);
    const auto b = bidirectional ? layers(true) : std::vector<GruLayer>{};
    Matrix<Real> d = dout;
    for (std::size_t i = f.size(); i-- > 0;) {
      if (!bidirectional) {
        d = f[i].backward(tree, cache.fwd[i], d);
        continue;
      }
      const auto H = static_cast<Eigen::Index>(f[i].hidden);
      Matrix<Real> df = f[i].backward(tree, cache.fwd[i], Matrix<Real>(d.leftCols(H)));
      df += b[i].backward(tree, cache.bwd[i], Matrix<Real>(d.rightCols(H)));
      d = std::move(df);
    }
    return d;
  }
};

// ---------------------------------------------------------------------------
// CNN: repeated [5x5 same-padded convolution, 2x2 stride-2 max pool] blocks.
// Images are stored channel-last, one flattened image per row.

struct ImageDims {
  std::size_t height = 0, width = 0, channels = 1;
  std::size_t size() const { return height * width * channels; }
  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

template <typename Real>
struct ConvBlockCache {
  Matrix<Real> cols;                 // (N*H*W) x (k*k*Cin)
  std::vector<Eigen::Index> argmax;  // per pooled output element: flat index into conv output
  std::size_t images = 0;
};

struct ConvBlock {
  std::string prefix;
  ImageDims input;
  std::size_t filters = 8;
  std::size_t kernel = 5;

  ImageDims conv_dims() const { return {input.height, input.width, filters}; }
  ImageDims output() const { return {input.height / 2, input.width / 2, filters}; }
  std::size_t patch() const { return kernel * kernel * input.channels; }

  void declare(std::vector<ParamSpec>& specs) const {
    specs.push_back({prefix + ".K", {patch(), filters}, patch(), kernel * kernel * filters, false});
    specs.push_back({prefix + ".b", {filters}, 0, 0, true});
  }

  template <typename Real>
  Matrix<Real> forward(const ParamTree<Real>& tree, const Matrix<Real>& x, ConvBlockCache<Real>* cache) const {
    require(static_cast<std::size_t>(x.cols()) == input.size(), ErrorKind::dimension, prefix + ": image size mismatch");
    const std::size_t n = static_cast<std::size_t>(x.rows());
    const std::size_t H = input.height, W = input.width, C = input.channels;
    const auto pad = static_cast<long>(kernel / 2);
    Matrix<Real> cols = Matrix<Real>::Zero(static_cast<Eigen::Index>(n * H * W), static_cast<Eigen::Index>(patch()));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          const auto row = static_cast<Eigen::Index>((i * H + y) * W + xx);
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            const long sy = static_cast<long>(y + ky) - pad;
            if (sy < 0 || sy >= static_cast<long>(H)) continue;
            for (std::size_t kx = 0; kx < kernel; ++kx) {
              const long sx = static_cast<long>(xx + kx) - pad;
              if (sx < 0 || sx >= static_cast<long>(W)) continue;
              for (std::size_t c = 0; c < C; ++c)
                cols(row, static_cast<Eigen::Index>((ky * kernel + kx) * C + c)) =
                    x(static_cast<Eigen::Index>(i),
                      static_cast<Eigen::Index>((static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)) * C + c));
            }
          }
        }
    Matrix<Real> conv = cols * tree.value(prefix + ".K").matrix();
    detail::add_bias(conv, tree.value(prefix + ".b"));

    const ImageDims o = output();
    const std::size_t F = filters;
    Matrix<Real> pooled(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(o.size()));
    std::vector<Eigen::Index> argmax(n * o.size());
    // conv is (n*H*W) x F; element (image i, y, x, f) lives at row (i*H + y)*W + x, column f.
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t py = 0; py < o.height; ++py)
        for (std::size_t px = 0; px < o.width; ++px)
          for (std::size_t f = 0; f < F; ++f) {
            Eigen::Index best = -1;
            Real best_v = 0;
            for (std::size_t dy = 0; dy < 2; ++dy)
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const auto row = static_cast<Eigen::Index>((i * H + 2 * py + dy) * W + 2 * px + dx);
                const Real v = conv(row, static_cast<Eigen::Index>(f));
                if (best < 0 || v > best_v) {
                  best = row * static_cast<Eigen::Index>(F) + static_cast<Eigen::Index>(f);
                  best_v = v;
                }
              }
            const std::size_t out_col = (py * o.width + px) * F + f;
            pooled(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(out_col)) = best_v;
            argmax[i * o.size() + out_col] = best;
          }
    if (cache) {
      cache->cols = std::move(cols);
      cache->argmax = std::move(argmax);
      cache->images = n;
    }
    return pooled;
  }

  template <typename Real>
  Matrix<Real> backward(ParamTree<Real>& tree, const ConvBlockCache<Real>& cache, const Matrix<Real>& dpooled,
                        bool need_input_grad) const {
    const std::size_t n = cache.images;
    const std::size_t H = input.height, W = input.width, C = input.channels;
    const auto F = static_cast<Eigen::Index>(filters);
    Matrix<Real> dconv = Matrix<Real>::Zero(static_cast<Eigen::Index>(n * H * W), F);
    const std::size_t osize = output().size();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < osize; ++k) {
        const Eigen::Index flat = cache.argmax[i * osize + k];
        dconv(flat / F, flat % F) += dpooled(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
      }
    tree.grad(prefix + ".K").matrix().noalias() += cache.cols.transpose() * dconv;
    detail::accumulate_bias_grad(tree.grad(prefix + ".b"), dconv);
    if (!need_input_grad) return {};
    Matrix<Real> dcols = dconv * tree.value(prefix + ".K").matrix().transpose();
    Matrix<Real> dx = Matrix<Real>::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(input.size()));
    const auto pad = static_cast<long>(kernel / 2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          const auto row = static_cast<Eigen::Index>((i * H + y) * W + xx);
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            const long sy = static_cast<long>(y + ky) - pad;
            if (sy < 0 || sy >= static_cast<long>(H)) continue;
            for (std::size_t kx = 0; kx < kernel; ++kx) {
              const long sx = static_cast<long>(xx + kx) - pad;
              if (sx < 0 || sx >= static_cast<long>(W)) continue;
              for (std::size_t c = 0; c < C; ++c)
                dx(static_cast<Eigen::Index>(i),
                   static_cast<Eigen::Index>((static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)) * C + c)) +=
                    dcols(row, static_cast<Eigen::Index>((ky * kernel + kx) * C + c));
            }
          }
        }
    return dx;
  }
};

template <typename Real>
struct CnnCache {
  std::vector<ConvBlockCache<Real>> blocks;
};

struct CnnTransform {
  std::string prefix;
  ImageDims input;
  std::size_t blocks = 3;
  std::size_t filters = 8;

  std::vector<ConvBlock> block_list() const {
    std::vector<ConvBlock> out;
    ImageDims d = input;
    for (std::size_t i = 0; i < blocks; ++i) {
      out.push_back({prefix + ".conv" + std::to_string(i), d, filters, 5});
      d = out.back().output();
    }
    return out;
  }

  void validate() const {
    std::size_t h = input.height, w = input.width;
    for (std::size_t i = 0; i < blocks; ++i) {
      require(h >= 2 && w >= 2, ErrorKind::dimension,
              prefix + ": image " + std::to_string(input.height) + "x" + std::to_string(input.width) +
                  " is too small for " + std::to_string(blocks) + " pooling stages");
      h /= 2;
      w /= 2;
    }
  }

  ImageDims output() const {
    validate();
    return block_list().back().output();
  }
  std::size_t out_dim() const { return output().size(); }

  void declare(std::vector<ParamSpec>& specs) const {
    validate();
    for (const auto& b : block_list()) b.declare(specs);
  }

  template <typename Real>
  Matrix<Real> forward(const ParamTree<Real>& tree, const Matrix<Real>& x, CnnCache<Real>* cache = nullptr) const {
    validate();
    const auto bl = block_list();
    if (cache) cache->blocks.assign(bl.size(), {});
    Matrix<Real> h = x;
    for (std::size_t i = 0; i < bl.size(); ++i) h = bl[i].forward(tree, h, cache ? &cache->blocks[i] : nullptr);
    return h;
  }

  template <typename Real>
  void backward(ParamTree<Real>& tree, const CnnCache<Real>& cache, const Matrix<Real>& dout) const {
    const auto bl = block_list();
    Matrix<Real> d = dout;
    for (std::size_t i = bl.size(); i-- > 0;) d = bl[i].backward(tree, cache.blocks[i], d, i > 0);
  }
};

template <typename Real>
Matrix<Real> conv2d_maxpool_forward(const ParamTree<Real>& tree, const std::string& prefix, ImageDims dims,
                                    const Matrix<Real>& images) {
  CnnTransform cnn{prefix, dims};
  return cnn.forward(tree, images);
}

}  // namespace stan
