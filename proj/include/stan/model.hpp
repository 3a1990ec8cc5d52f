// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stan/errors.hpp"
#include "stan/features.hpp"
#include "stan/layers.hpp"
#include "stan/noise.hpp"
#include "stan/rng.hpp"
#include "stan/tensor.hpp"

namespace stan {

enum class Architecture { stan, concat, single };
enum class TransformKind { identity, dense, cnn };
enum class Modality { features, image };

inline const char* to_string(Architecture a) {
  switch (a) {
    case Architecture::stan: return "stan";
    case Architecture::concat: return "concat";
    case Architecture::single: return "single";
  }
  return "?";
}
inline const char* to_string(TransformKind k) {
  switch (k) {
    case TransformKind::identity: return "identity";
    case TransformKind::dense: return "dense";
    case TransformKind::cnn: return "cnn";
  }
  return "?";
}

struct SensorSpec {
  Modality modality = Modality::features;
  std::size_t feature_dim = 0;  // features modality
  ImageDims image;              // image modality
  TransformKind transform = TransformKind::identity;
  std::size_t transform_units = 0;  // dense width
  std::size_t attention_units = 0;  // 0: no attention layer
  // Sensors with the same non-empty label share transform and attention weights.
  std::string share_group;

  std::size_t input_dim() const { return modality == Modality::image ? image.size() : feature_dim; }

  std::size_t transformed_dim() const {
    switch (transform) {
      case TransformKind::identity: return input_dim();
      case TransformKind::dense: return transform_units;
      case TransformKind::cnn: return CnnTransform{"", image}.out_dim();
    }
    return 0;
  }

  bool same_layers(const SensorSpec& o) const {
    return modality == o.modality && feature_dim == o.feature_dim && image == o.image && transform == o.transform &&
           transform_units == o.transform_units && attention_units == o.attention_units;
  }
};

struct ClassifierSpec {
  std::vector<std::size_t> layers;
  bool bidirectional = false;
  std::size_t vocabulary_size = 11;

  std::size_t classes() const { return vocabulary_size + 1; }  // + blank
};

struct ModelSpec {
  Architecture architecture = Architecture::stan;
  std::vector<SensorSpec> sensors;
  ClassifierSpec classifier;
  GruVariant gru = GruVariant::reset_after;

  std::size_t merged_dim() const {
    if (architecture == Architecture::concat) {
      std::size_t d = 0;
      for (const auto& s : sensors) d += s.transformed_dim();
      return d;
    }
    return sensors.empty() ? 0 : sensors.front().transformed_dim();
  }

  // Index of the sensor whose parameters sensor `i` uses.
  std::size_t owner(std::size_t i) const {
    if (sensors[i].share_group.empty()) return i;
    for (std::size_t j = 0; j < i; ++j)
      if (sensors[j].share_group == sensors[i].share_group) return j;
    return i;
  }

  void validate() const {
    const std::size_t n = sensors.size();
    switch (architecture) {
      case Architecture::stan:
        require(n >= 2, ErrorKind::config, "stan architecture needs at least 2 sensors");
        for (const auto& s : sensors)
          require(s.attention_units > 0, ErrorKind::config, "stan sensors need an attention layer");
        break;
      case Architecture::concat:
        require(n >= 2, ErrorKind::config, "concat architecture needs at least 2 sensors");
        for (const auto& s : sensors)
          require(s.attention_units == 0, ErrorKind::config, "concat sensors take no attention layer");
        break;
      case Architecture::single:
        require(n == 1, ErrorKind::config, "single architecture takes exactly 1 sensor");
        require(sensors[0].attention_units == 0, ErrorKind::config, "single sensor takes no attention layer");
        break;
    }
    require(classifier.vocabulary_size >= 1, ErrorKind::config, "vocabulary must not be empty");
    for (std::size_t h : classifier.layers) require(h > 0, ErrorKind::config, "classifier layer width must be > 0");
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = sensors[i];
      require(s.input_dim() > 0, ErrorKind::config, "sensor " + std::to_string(i) + " has zero input dimension");
      if (s.transform == TransformKind::dense)
        require(s.transform_units > 0, ErrorKind::config, "dense transform needs units > 0");
      if (s.transform == TransformKind::cnn) {
        require(s.modality == Modality::image, ErrorKind::config, "cnn transform needs image input");
        CnnTransform{"", s.image}.validate();
      }
      const std::size_t o = owner(i);
      if (o != i)
        require(s.same_layers(sensors[o]), ErrorKind::config,
                "share group '" + s.share_group + "' members must have identical layer shapes");
    }
    if (architecture == Architecture::stan)
      for (std::size_t i = 1; i < n; ++i)
        require(sensors[i].transformed_dim() == sensors[0].transformed_dim(), ErrorKind::config,
                "merged sensors must share the transformed dimension (" +
                    std::to_string(sensors[i].transformed_dim()) + " vs " +
                    std::to_string(sensors[0].transformed_dim()) + ")");
  }
};

// ---------------------------------------------------------------------------
// JSON form of the spec (also used by checkpoints and configs).

inline void to_json(nlohmann::json& j, const SensorSpec& s) {
  j = nlohmann::json{{"modality", s.modality == Modality::image ? "image" : "features"},
                     {"transform", to_string(s.transform)},
                     {"transform_units", s.transform_units},
                     {"attention_units", s.attention_units},
                     {"share_group", s.share_group}};
  if (s.modality == Modality::image)
    j["image"] = {s.image.height, s.image.width, s.image.channels};
  else
    j["feature_dim"] = s.feature_dim;
}

inline void from_json(const nlohmann::json& j, SensorSpec& s) {
  s = SensorSpec{};
  const std::string modality = j.value("modality", std::string("features"));
  require(modality == "features" || modality == "image", ErrorKind::config, "unknown modality '" + modality + "'");
  s.modality = modality == "image" ? Modality::image : Modality::features;
  if (s.modality == Modality::image) {
    const auto& im = j.at("image");
    require(im.is_array() && (im.size() == 2 || im.size() == 3), ErrorKind::config, "image must be [h, w(, c)]");
    s.image = {im[0].get<std::size_t>(), im[1].get<std::size_t>(), im.size() == 3 ? im[2].get<std::size_t>() : 1};
  } else {
    s.feature_dim = j.value("feature_dim", std::size_t{0});
  }
  const std::string t = j.value("transform", std::string("identity"));
  if (t == "identity")
    s.transform = TransformKind::identity;
  else if (t == "dense")
    s.transform = TransformKind::dense;
  else if (t == "cnn")
    s.transform = TransformKind::cnn;
  else
    fail(ErrorKind::config, "unknown transform '" + t + "'");
  s.transform_units = j.value("transform_units", std::size_t{0});
  s.attention_units = j.value("attention_units", std::size_t{0});
  s.share_group = j.value("share_group", std::string());
}

inline void to_json(nlohmann::json& j, const ModelSpec& m) {
  j = nlohmann::json{{"architecture", to_string(m.architecture)},
                     {"gru", to_string(m.gru)},
                     {"sensors", m.sensors},
                     {"classifier",
                      {{"layers", m.classifier.layers},
                       {"bidirectional", m.classifier.bidirectional},
                       {"vocabulary_size", m.classifier.vocabulary_size}}}};
}

// Accepts either an explicit "sensors" list or a count plus a "sensor" template.
inline void from_json(const nlohmann::json& j, ModelSpec& m) {
  m = ModelSpec{};
  const std::string arch = j.value("architecture", std::string("stan"));
  if (arch == "stan")
    m.architecture = Architecture::stan;
  else if (arch == "concat")
    m.architecture = Architecture::concat;
  else if (arch == "single")
    m.architecture = Architecture::single;
  else
    fail(ErrorKind::config, "unknown architecture '" + arch + "'");
  m.gru = gru_variant_from_string(j.value("gru", std::string("reset_after")));
  const auto& sensors = j.at("sensors");
  if (sensors.is_number_integer()) {
    SensorSpec tmpl = j.contains("sensor") ? j.at("sensor").get<SensorSpec>() : SensorSpec{};
    if (m.architecture != Architecture::stan) tmpl.attention_units = 0;
    m.sensors.assign(sensors.get<std::size_t>(), tmpl);
  } else {
    m.sensors = sensors.get<std::vector<SensorSpec>>();
  }
  const auto& c = j.at("classifier");
  m.classifier.layers = c.value("layers", std::vector<std::size_t>{});
  m.classifier.bidirectional = c.value("bidirectional", false);
  m.classifier.vocabulary_size = c.value("vocabulary_size", std::size_t{11});
}

// ---------------------------------------------------------------------------
// Layer layout derived from a spec. Parameter paths:
//   sensor.<i>.transform.*, sensor.<i>.attention.{gru,score}.*, classifier.*

struct SensorLayers {
  std::size_t owner = 0;
  std::optional<DenseLayer> dense;
  std::optional<CnnTransform> cnn;
  std::optional<GruLayer> attention;
  std::optional<DenseLayer> score;
};

struct ModelLayout {
  std::vector<SensorLayers> sensors;
  RnnStack classifier;
  DenseLayer output;

  explicit ModelLayout(const ModelSpec& spec) {
    spec.validate();
    for (std::size_t i = 0; i < spec.sensors.size(); ++i) {
      const auto& s = spec.sensors[i];
      SensorLayers l;
      l.owner = spec.owner(i);
      const std::string base = "sensor." + std::to_string(l.owner);
      if (s.transform == TransformKind::dense)
        l.dense = DenseLayer{base + ".transform.dense", s.input_dim(), s.transform_units, Activation::tanh};
      if (s.transform == TransformKind::cnn) l.cnn = CnnTransform{base + ".transform.cnn", s.image};
      if (s.attention_units > 0) {
        l.attention = GruLayer{base + ".attention.gru", s.transformed_dim(), s.attention_units, spec.gru, false};
        l.score = DenseLayer{base + ".attention.score", s.attention_units, 1, Activation::identity};
      }
      sensors.push_back(std::move(l));
    }
    classifier = RnnStack{"classifier", spec.merged_dim(), spec.classifier.layers, spec.classifier.bidirectional,
                          spec.gru};
    output = DenseLayer{"classifier.output", classifier.out_dim(), spec.classifier.classes(), Activation::identity};
  }

  std::vector<ParamSpec> param_specs() const {
    std::vector<ParamSpec> specs;
    for (std::size_t i = 0; i < sensors.size(); ++i) {
      const auto& l = sensors[i];
      if (l.owner != i) continue;
      if (l.dense) l.dense->declare(specs);
      if (l.cnn) l.cnn->declare(specs);
      if (l.attention) {
        l.attention->declare(specs);
        l.score->declare(specs);
      }
    }
    classifier.declare(specs);
    output.declare(specs);
    return specs;
  }
};

inline std::size_t count_params(const ModelSpec& spec) { return count_params(ModelLayout(spec).param_specs()); }

template <typename Real>
struct StanModel {
  ModelSpec spec;
  ParamTree<Real> params;
};

template <typename Real>
StanModel<Real> build_model(const ModelSpec& spec, Prng& prng) {
  ModelLayout layout(spec);
  return {spec, init_params<Real>(layout.param_specs(), prng)};
}

// ---------------------------------------------------------------------------
// Forward / backward

// One batch: per-sensor frame-major (T*B) x D_i inputs, zero-padded past each
// sample's length.
template <typename Real>
struct SensorBatch {
  std::vector<Matrix<Real>> sensors;
  std::size_t frames = 0;
  std::size_t batch = 0;
  std::vector<std::size_t> lengths;

  FrameMask<Real> mask() const {
    bool full = true;
    for (std::size_t l : lengths) full = full && l == frames;
    if (full) return {};
    FrameMask<Real> m(static_cast<Eigen::Index>(frames * batch));
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t b = 0; b < batch; ++b) m(static_cast<Eigen::Index>(t * batch + b)) = t < lengths[b] ? 1 : 0;
    return m;
  }

  // Rows of sample b (its valid frames) from a frame-major matrix.
  template <typename M>
  static Matrix<Real> sample_rows(const M& m, std::size_t b, std::size_t batch, std::size_t length) {
    Matrix<Real> out(static_cast<Eigen::Index>(length), m.cols());
    for (std::size_t t = 0; t < length; ++t)
      out.row(static_cast<Eigen::Index>(t)) = m.row(static_cast<Eigen::Index>(t * batch + b));
    return out;
  }
};

// Batch from per-sensor sequences: inputs[i][b] is sensor i of sample b.
template <typename Real>
SensorBatch<Real> make_batch(const std::vector<std::vector<const FeatureSequence*>>& inputs) {
  require(!inputs.empty() && !inputs[0].empty(), ErrorKind::input, "make_batch: no inputs");
  SensorBatch<Real> out;
  out.batch = inputs[0].size();
  for (const auto* seq : inputs[0]) {
    out.lengths.push_back(seq->length());
    out.frames = std::max(out.frames, seq->length());
  }
  require(out.frames > 0, ErrorKind::empty_sequence, "make_batch: zero-length sequences");
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    require(inputs[i].size() == out.batch, ErrorKind::input, "make_batch: sensors disagree on batch size");
    const auto dim = static_cast<Eigen::Index>(inputs[i][0]->dim());
    Matrix<Real> m = Matrix<Real>::Zero(static_cast<Eigen::Index>(out.frames * out.batch), dim);
    for (std::size_t b = 0; b < out.batch; ++b) {
      const auto& seq = *inputs[i][b];
      require(seq.length() == out.lengths[b], ErrorKind::input,
              "make_batch: sensor " + std::to_string(i) + " length differs for sample " + std::to_string(b));
      require(seq.frames.cols() == dim, ErrorKind::input, "make_batch: feature dimension differs within a sensor");
      for (std::size_t t = 0; t < seq.length(); ++t)
        m.row(static_cast<Eigen::Index>(t * out.batch + b)) = seq.frames.row(static_cast<Eigen::Index>(t)).template cast<Real>();
    }
    out.sensors.push_back(std::move(m));
  }
  return out;
}

template <typename Real>
struct ForwardTape {
  std::size_t frames = 0, batch = 0;
  FrameMask<Real> mask;
  std::vector<DenseCache<Real>> dense;
  std::vector<CnnCache<Real>> cnn;
  std::vector<Matrix<Real>> transformed;
  std::vector<GruCache<Real>> attention;
  std::vector<DenseCache<Real>> score;
  bool pinned = false;
  Matrix<Real> weights;
  RnnCache<Real> classifier;
  DenseCache<Real> output;
};

template <typename Real>
struct StanForwardResult {
  Matrix<Real> logits;     // (T*B) x classes
  Matrix<Real> scores;     // (T*B) x N raw attention scores (stan only)
  Matrix<Real> attention;  // (T*B) x N softmax weights (stan only)
  Matrix<Real> merged;     // (T*B) x merged_dim
  std::size_t frames = 0, batch = 0;
  std::vector<std::size_t> lengths;
};

template <typename Real>
struct ForwardOptions {
  // Externally fixed attention scores ((T*B) x N); bypasses the attention layers.
  const Matrix<Real>* pinned_scores = nullptr;
  ForwardTape<Real>* tape = nullptr;
};

template <typename Real>
StanForwardResult<Real> forward(const StanModel<Real>& model, const SensorBatch<Real>& in,
                                ForwardOptions<Real> opt = {}) {
  const ModelLayout layout(model.spec);
  const auto& spec = model.spec;
  const std::size_t n = spec.sensors.size();
  require(in.sensors.size() == n, ErrorKind::input,
          "forward: model has " + std::to_string(n) + " sensors, got " + std::to_string(in.sensors.size()));
  require(in.frames >= 1, ErrorKind::empty_sequence, "forward: zero-length batch");
  require(in.lengths.size() == in.batch, ErrorKind::input, "forward: lengths/batch mismatch");
  const auto rows = static_cast<Eigen::Index>(in.frames * in.batch);
  for (std::size_t i = 0; i < n; ++i) {
    require(in.sensors[i].rows() == rows, ErrorKind::input, "forward: sensor " + std::to_string(i) + " frame count mismatch");
    require(static_cast<std::size_t>(in.sensors[i].cols()) == spec.sensors[i].input_dim(), ErrorKind::input,
            "forward: sensor " + std::to_string(i) + " has dimension " + std::to_string(in.sensors[i].cols()) +
                ", expected " + std::to_string(spec.sensors[i].input_dim()));
  }
  const FrameMask<Real> mask = in.mask();
  ForwardTape<Real>* tape = opt.tape;
  if (tape) {
    *tape = ForwardTape<Real>{};
    tape->frames = in.frames;
    tape->batch = in.batch;
    tape->mask = mask;
    tape->dense.resize(n);
    tape->cnn.resize(n);
    tape->attention.resize(n);
    tape->score.resize(n);
  }

  std::vector<Matrix<Real>> transformed(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = layout.sensors[i];
    if (l.dense)
      transformed[i] = l.dense->forward(model.params, in.sensors[i], tape ? &tape->dense[i] : nullptr);
    else if (l.cnn)
      transformed[i] = l.cnn->forward(model.params, in.sensors[i], tape ? &tape->cnn[i] : nullptr);
    else
      transformed[i] = in.sensors[i];
  }

  StanForwardResult<Real> out;
  out.frames = in.frames;
  out.batch = in.batch;
  out.lengths = in.lengths;
  switch (spec.architecture) {
    case Architecture::single:
      out.merged = transformed[0];
      break;
    case Architecture::concat: {
      out.merged.resize(rows, static_cast<Eigen::Index>(spec.merged_dim()));
      Eigen::Index col = 0;
      for (const auto& t : transformed) {
        out.merged.middleCols(col, t.cols()) = t;
        col += t.cols();
      }
      break;
    }
    case Architecture::stan: {
      if (opt.pinned_scores) {
        require(opt.pinned_scores->rows() == rows && opt.pinned_scores->cols() == static_cast<Eigen::Index>(n),
                ErrorKind::dimension, "forward: pinned score shape mismatch");
        out.scores = *opt.pinned_scores;
      } else {
        out.scores.resize(rows, static_cast<Eigen::Index>(n));
        for (std::size_t i = 0; i < n; ++i) {
          const auto& l = layout.sensors[i];
          Matrix<Real> g = l.attention->forward(model.params, transformed[i], in.frames, in.batch, mask,
                                                tape ? &tape->attention[i] : nullptr);
          out.scores.col(static_cast<Eigen::Index>(i)) =
              l.score->forward(model.params, g, tape ? &tape->score[i] : nullptr).col(0);
        }
      }
      out.attention = softmax_rows(out.scores);
      out.merged = Matrix<Real>::Zero(rows, transformed[0].cols());
      for (std::size_t i = 0; i < n; ++i)
        out.merged.array() += transformed[i].array().colwise() * out.attention.col(static_cast<Eigen::Index>(i)).array();
      if (tape) {
        tape->pinned = opt.pinned_scores != nullptr;
        tape->weights = out.attention;
      }
      break;
    }
  }
  if (tape) tape->transformed = transformed;

  const Matrix<Real> h =
      layout.classifier.forward(model.params, out.merged, in.frames, in.batch, mask, tape ? &tape->classifier : nullptr);
  out.logits = layout.output.forward(model.params, h, tape ? &tape->output : nullptr);
  check_finite(out.logits, "logits");
  return out;
}

// Accumulates parameter gradients for d(loss)/d(logits) = dlogits.
template <typename Real>
void backward(StanModel<Real>& model, const ForwardTape<Real>& tape, const Matrix<Real>& dlogits) {
  const ModelLayout layout(model.spec);
  const auto& spec = model.spec;
  const std::size_t n = spec.sensors.size();
  Matrix<Real> dh = layout.output.backward(model.params, tape.output, dlogits);
  const Matrix<Real> dmerged = layout.classifier.backward(model.params, tape.classifier, dh);

  std::vector<Matrix<Real>> dt(n);
  switch (spec.architecture) {
    case Architecture::single:
      dt[0] = dmerged;
      break;
    case Architecture::concat: {
      Eigen::Index col = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto w = tape.transformed[i].cols();
        dt[i] = dmerged.middleCols(col, w);
        col += w;
      }
      break;
    }
    case Architecture::stan: {
      Matrix<Real> dweights(dmerged.rows(), static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) {
        const auto a = tape.weights.col(static_cast<Eigen::Index>(i)).array();
        dt[i] = (dmerged.array().colwise() * a).matrix();
        dweights.col(static_cast<Eigen::Index>(i)) = (dmerged.array() * tape.transformed[i].array()).rowwise().sum().matrix();
      }
      if (tape.pinned) break;
      const Matrix<Real> dscores = softmax_rows_backward(tape.weights, dweights);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& l = layout.sensors[i];
        const Matrix<Real> dg = l.score->backward(model.params, tape.score[i], Matrix<Real>(dscores.col(static_cast<Eigen::Index>(i))));
        dt[i] += l.attention->backward(model.params, tape.attention[i], dg);
      }
      break;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& l = layout.sensors[i];
    if (l.dense) l.dense->backward(model.params, tape.dense[i], dt[i]);
    if (l.cnn) l.cnn->backward(model.params, tape.cnn[i], dt[i]);
  }
}

// ---------------------------------------------------------------------------
// Attention traces

struct AttentionTrace {
  std::vector<std::vector<double>> sigma;    // [sensor][frame]
  std::vector<std::vector<double>> weights;  // [sensor][frame]

  std::size_t frames() const { return weights.empty() ? 0 : weights[0].size(); }
  std::size_t sensors() const { return weights.size(); }

  void write_csv(std::ostream& os) const {
    os << "frame";
    for (std::size_t i = 0; i < sensors(); ++i) os << ",sigma_" << i + 1;
    for (std::size_t i = 0; i < sensors(); ++i) os << ",attn_" << i + 1;
    os << '\n';
    for (std::size_t t = 0; t < frames(); ++t) {
      os << t;
      for (std::size_t i = 0; i < sensors(); ++i) os << ',' << format_real(sigma[i][t]);
      for (std::size_t i = 0; i < sensors(); ++i) os << ',' << format_real(weights[i][t]);
      os << '\n';
    }
  }
};

// Corrupts each sensor's copy of `clean` with its schedule (noise drawn from
// `noise_streams[i]`), runs the model and returns the per-frame weights.
template <typename Real>
AttentionTrace trace_attention(const StanModel<Real>& model, const FeatureSequence& clean,
                               const std::vector<NoiseSchedule>& schedules, std::vector<Prng>& noise_streams) {
  require(model.spec.architecture == Architecture::stan, ErrorKind::input, "trace_attention needs a stan model");
  const std::size_t n = model.spec.sensors.size();
  require(schedules.size() == n && noise_streams.size() == n, ErrorKind::input,
          "trace_attention: need one schedule and one noise stream per sensor");
  std::vector<FeatureSequence> noisy;
  noisy.reserve(n);
  for (std::size_t i = 0; i < n; ++i) noisy.push_back(apply_noise(noise_streams[i], clean, schedules[i]));
  std::vector<std::vector<const FeatureSequence*>> ptrs(n);
  for (std::size_t i = 0; i < n; ++i) ptrs[i].push_back(&noisy[i]);
  const auto result = forward(model, make_batch<Real>(ptrs));
  AttentionTrace trace;
  for (std::size_t i = 0; i < n; ++i) {
    trace.sigma.push_back(schedules[i].sigma);
    std::vector<double> w(clean.length());
    for (std::size_t t = 0; t < clean.length(); ++t)
      w[t] = static_cast<double>(result.attention(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)));
    trace.weights.push_back(std::move(w));
  }
  return trace;
}

}  // namespace stan
