// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stan/corpus.hpp"
#include "stan/loss.hpp"
#include "stan/metrics.hpp"
#include "stan/model.hpp"
#include "stan/noise.hpp"

namespace stan {

// ---------------------------------------------------------------------------
// ADAM

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamConfig, lr, beta1, beta2, epsilon)

template <typename Real>
struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;

  explicit AdamState(const ParamTree<Real>& params, AdamConfig cfg = {}) : config(cfg) {
    for (const auto& e : params.entries()) {
      m.emplace_back(e.value.size(), 0.0);
      v.emplace_back(e.value.size(), 0.0);
    }
  }
};

// One bias-corrected update from the gradients stored in `params`.
template <typename Real>
void adam_step(ParamTree<Real>& params, AdamState<Real>& state) {
  auto& entries = params.entries();
  require(entries.size() == state.m.size(), ErrorKind::dimension, "adam_step: state does not match parameters");
  for (const auto& e : entries)
    if (!e.grad.all_finite()) fail(ErrorKind::numeric, "adam_step: non-finite gradient in '" + e.name + "'");
  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(c.beta1, t);
  const double c2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t k = 0; k < entries.size(); ++k) {
    auto& value = entries[k].value.values();
    const auto& grad = entries[k].grad.values();
    require(value.size() == state.m[k].size(), ErrorKind::dimension, "adam_step: shape changed for '" + entries[k].name + "'");
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      value[i] = static_cast<Real>(static_cast<double>(value[i]) - c.lr * mhat / (std::sqrt(vhat) + c.epsilon));
    }
  }
}

// Rescales all gradients so their joint L2 norm is at most `max_norm`;
// returns the norm before clipping.
template <typename Real>
double clip_global_norm(ParamTree<Real>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& e : params.entries())
    for (Real g : e.grad.values()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const auto scale = static_cast<Real>(max_norm / norm);
    for (auto& e : params.entries())
      for (auto& g : e.grad.values()) g *= scale;
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Noise conditions

struct NoiseConfig {
  bool enabled = true;
  WalkConfig walk;
};

enum class ConditionKind { clean, noisy, profile };

inline const char* to_string(ConditionKind k) {
  switch (k) {
    case ConditionKind::clean: return "clean";
    case ConditionKind::noisy: return "noisy";
    case ConditionKind::profile: return "profile";
  }
  return "?";
}

inline ConditionKind condition_from_string(const std::string& s) {
  if (s == "clean") return ConditionKind::clean;
  if (s == "noisy") return ConditionKind::noisy;
  if (s == "profile") return ConditionKind::profile;
  fail(ErrorKind::config, "unknown condition '" + s + "' (expected clean, noisy or profile)");
}

struct EvalCondition {
  ConditionKind kind = ConditionKind::clean;
  WalkConfig walk;                         // noisy
  std::vector<NoiseProfileSpec> profiles;  // profile: one per sensor
  std::uint64_t seed = 0;
  // Number of independently corrupted copies presented to the model. For a
  // one-sensor model with more copies, the copies are averaged into its input.
  std::size_t copies = 0;  // 0: one per model sensor
};

// Schedules and corrupted copies of one clean sample.
struct CorruptedSample {
  std::vector<NoiseSchedule> schedules;
  std::vector<FeatureSequence> copies;
};

inline CorruptedSample corrupt(const FeatureSequence& clean, std::size_t copies, const std::function<NoiseSchedule(std::size_t)>& schedule_for,
                               const std::function<Prng(std::size_t)>& noise_stream_for) {
  CorruptedSample out;
  for (std::size_t i = 0; i < copies; ++i) {
    out.schedules.push_back(schedule_for(i));
    Prng p = noise_stream_for(i);
    out.copies.push_back(apply_noise(p, clean, out.schedules.back()));
  }
  return out;
}

inline CorruptedSample corrupt_for_condition(const FeatureSequence& clean, const EvalCondition& cond, std::size_t copies,
                                             std::size_t sample_index) {
  const std::size_t T = clean.length();
  auto stream = [&](std::size_t i, std::uint64_t purpose) {
    return Prng::derive(cond.seed, {stream::eval_noise, sample_index, i, purpose});
  };
  switch (cond.kind) {
    case ConditionKind::clean:
      return corrupt(clean, copies, [&](std::size_t) { return NoiseSchedule::zeros(T); },
                     [&](std::size_t i) { return stream(i, 1); });
    case ConditionKind::noisy:
      return corrupt(
          clean, copies,
          [&](std::size_t i) {
            Prng p = stream(i, 0);
            NoiseProfileSpec walk;
            walk.kind = NoiseKind::random_walk;
            return make_schedule(walk, cond.walk, p, T);
          },
          [&](std::size_t i) { return stream(i, 1); });
    case ConditionKind::profile:
      require(cond.profiles.size() == copies, ErrorKind::config,
              "profile condition needs one profile per sensor (" + std::to_string(copies) + "), got " +
                  std::to_string(cond.profiles.size()));
      return corrupt(
          clean, copies,
          [&](std::size_t i) {
            Prng p = stream(i, 0);
            return make_schedule(cond.profiles[i], cond.walk, p, T);
          },
          [&](std::size_t i) { return stream(i, 1); });
  }
  return {};
}

inline FeatureSequence average_copies(const std::vector<FeatureSequence>& copies) {
  require(!copies.empty(), ErrorKind::input, "average_copies: nothing to average");
  Matrix<double> acc = Matrix<double>::Zero(copies[0].frames.rows(), copies[0].frames.cols());
  for (const auto& c : copies) acc += c.frames.cast<double>();
  FeatureSequence out = copies[0];
  out.frames = (acc / static_cast<double>(copies.size())).cast<float>();
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  double clip_norm = 5.0;
  AdamConfig adam;
  NoiseConfig noise;
  std::size_t max_train_samples = 0;  // 0: all

  void validate() const {
    require(max_epochs >= 1, ErrorKind::config, "train: max_epochs must be >= 1");
    require(patience < max_epochs, ErrorKind::config, "train: patience must be < max_epochs");
    require(batch_size >= 1, ErrorKind::config, "train: batch_size must be >= 1");
    require(validation_fraction > 0.0 && validation_fraction < 1.0, ErrorKind::config,
            "train: validation_fraction must lie in (0, 1)");
    require(adam.lr > 0.0, ErrorKind::config, "train: learning rate must be > 0");
    if (noise.enabled) noise.walk.validate();
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_nll = 0.0;
  double valid_nll = 0.0;
  double valid_ser = 0.0;
  bool improved = false;

  nlohmann::ordered_json to_json() const {
    return {{"epoch", epoch}, {"train_nll", train_nll}, {"valid_nll", valid_nll}, {"valid_ser", valid_ser},
            {"improved", improved}};
  }
};

template <typename Real>
struct TrainResult {
  StanModel<Real> model;  // parameters of the best validation epoch
  std::vector<EpochRecord> log;
  std::size_t best_epoch = 0;
  double best_valid_nll = 0.0;
  std::size_t excluded = 0;
  std::size_t train_samples = 0;
  std::size_t valid_samples = 0;
};

namespace detail {

template <typename Real>
void copy_values(ParamTree<Real>& dst, const ParamTree<Real>& src) {
  for (std::size_t k = 0; k < dst.entries().size(); ++k) dst.entries()[k].value = src.entries()[k].value;
}

// Batches of similar length: shuffled, then sorted within windows of
// `window` batches, then the batch order is shuffled again.
inline std::vector<std::vector<std::size_t>> length_bucketed_batches(const std::vector<std::size_t>& items,
                                                                     const std::vector<std::size_t>& lengths,
                                                                     std::size_t batch_size, Prng& prng) {
  std::vector<std::size_t> order = items;
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[prng.next_u32() % i]);
  const std::size_t window = batch_size * 16;
  for (std::size_t start = 0; start < order.size(); start += window) {
    const auto end = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + window));
    std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(start), end,
                     [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size)
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch_size)));
  for (std::size_t i = batches.size(); i > 1; --i) std::swap(batches[i - 1], batches[prng.next_u32() % i]);
  return batches;
}

// Per-sensor inputs for a batch of samples, given each sample's corrupted copies.
template <typename Real>
SensorBatch<Real> batch_from_copies(const std::vector<std::vector<FeatureSequence>>& per_sample, std::size_t sensors) {
  std::vector<std::vector<const FeatureSequence*>> ptrs(sensors);
  for (const auto& copies : per_sample)
    for (std::size_t i = 0; i < sensors; ++i) ptrs[i].push_back(&copies[i]);
  return make_batch<Real>(ptrs);
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochRecord&)>;

// Minimizes the mean CTC NLL with ADAM. Every sensor sees its own corruption
// of the same clean sample, redrawn each epoch; validation noise is drawn
// once. Training stops after `patience` epochs without a validation NLL
// improvement, and the best epoch's parameters are returned.
template <typename Real>
TrainResult<Real> train(StanModel<Real> model, const std::vector<Sample>& corpus_train, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {}) {
  cfg.validate();
  const std::size_t sensors = model.spec.sensors.size();
  for (const auto& s : model.spec.sensors)
    require(s.input_dim() == (corpus_train.empty() ? 0 : corpus_train[0].features.dim()), ErrorKind::dimension,
            "train: model expects " + std::to_string(s.input_dim()) + "-dimensional input, corpus has " +
                std::to_string(corpus_train.empty() ? 0 : corpus_train[0].features.dim()));
  TrainResult<Real> result;

  std::vector<std::size_t> usable;
  const std::size_t limit = cfg.max_train_samples ? std::min(cfg.max_train_samples, corpus_train.size()) : corpus_train.size();
  for (std::size_t i = 0; i < limit; ++i) {
    const auto& s = corpus_train[i];
    for (int l : s.labels)
      require(l >= 1 && static_cast<std::size_t>(l) <= model.spec.classifier.vocabulary_size, ErrorKind::input,
              "train: label " + std::to_string(l) + " outside the model vocabulary");
    if (ctc_feasible(s.labels, s.features.length()) && s.features.length() > 0)
      usable.push_back(i);
    else
      ++result.excluded;
  }
  Prng split_prng = Prng::derive(cfg.seed, {stream::shuffle, 0});
  for (std::size_t i = usable.size(); i > 1; --i) std::swap(usable[i - 1], usable[split_prng.next_u32() % i]);
  const auto n_valid = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(usable.size()))));
  require(usable.size() > n_valid, ErrorKind::input, "train: too few usable samples to hold out a validation split");
  std::vector<std::size_t> valid(usable.begin(), usable.begin() + static_cast<std::ptrdiff_t>(n_valid));
  std::vector<std::size_t> training(usable.begin() + static_cast<std::ptrdiff_t>(n_valid), usable.end());
  std::sort(valid.begin(), valid.end());
  std::sort(training.begin(), training.end());
  result.train_samples = training.size();
  result.valid_samples = valid.size();

  std::vector<std::size_t> lengths(corpus_train.size());
  for (std::size_t i = 0; i < corpus_train.size(); ++i) lengths[i] = corpus_train[i].features.length();

  auto copies_for = [&](std::size_t sample, std::uint64_t purpose, std::uint64_t epoch) {
    const auto& clean = corpus_train[sample].features;
    if (!cfg.noise.enabled) return std::vector<FeatureSequence>(sensors, clean);
    return corrupt(
               clean, sensors,
               [&](std::size_t i) {
                 Prng p = Prng::derive(cfg.seed, {purpose, epoch, sample, i, 0});
                 return walk_schedule(p, cfg.noise.walk, clean.length());
               },
               [&](std::size_t i) { return Prng::derive(cfg.seed, {purpose, epoch, sample, i, 1}); })
        .copies;
  };

  // Fixed validation inputs.
  std::vector<std::vector<std::size_t>> valid_batches;
  std::vector<std::vector<std::vector<FeatureSequence>>> valid_inputs;
  {
    std::vector<std::size_t> order = valid;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      valid_batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      auto& inputs = valid_inputs.emplace_back();
      for (std::size_t s : valid_batches.back()) inputs.push_back(copies_for(s, stream::valid_noise, 0));
    }
  }

  AdamState<Real> adam(model.params, cfg.adam);
  ParamTree<Real> best = model.params;
  result.best_valid_nll = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Prng order_prng = Prng::derive(cfg.seed, {stream::shuffle, epoch});
    const auto batches = detail::length_bucketed_batches(training, lengths, cfg.batch_size, order_prng);
    double train_sum = 0.0;
    std::size_t train_count = 0;
    for (const auto& batch : batches) {
      std::vector<std::vector<FeatureSequence>> inputs;
      std::vector<const LabelSequence*> labels;
      for (std::size_t s : batch) {
        inputs.push_back(copies_for(s, stream::train_noise, epoch));
        labels.push_back(&corpus_train[s].labels);
      }
      ForwardTape<Real> tape;
      ForwardOptions<Real> opt;
      opt.tape = &tape;
      const auto fwd = forward(model, detail::batch_from_copies<Real>(inputs, sensors), opt);
      const auto loss = batch_ctc_loss(fwd, labels);
      if (!std::isfinite(loss.mean_nll)) fail(ErrorKind::numeric, "train: non-finite loss in epoch " + std::to_string(epoch));
      model.params.zero_grad();
      backward(model, tape, loss.dlogits);
      clip_global_norm(model.params, cfg.clip_norm);
      adam_step(model.params, adam);
      train_sum += loss.mean_nll * static_cast<double>(batch.size());
      train_count += batch.size();
    }

    double valid_sum = 0.0;
    std::vector<LabelSequence> refs, hyps;
    for (std::size_t b = 0; b < valid_batches.size(); ++b) {
      std::vector<const LabelSequence*> labels;
      for (std::size_t s : valid_batches[b]) {
        labels.push_back(&corpus_train[s].labels);
        refs.push_back(corpus_train[s].labels);
      }
      const auto fwd = forward(model, detail::batch_from_copies<Real>(valid_inputs[b], sensors));
      valid_sum += batch_ctc_loss(fwd, labels, false).mean_nll * static_cast<double>(labels.size());
      for (auto& h : decode_batch(fwd)) hyps.push_back(std::move(h));
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_nll = train_sum / static_cast<double>(train_count);
    rec.valid_nll = valid_sum / static_cast<double>(valid.size());
    rec.valid_ser = ser(refs, hyps);
    rec.improved = rec.valid_nll < result.best_valid_nll;
    if (rec.improved) {
      result.best_valid_nll = rec.valid_nll;
      result.best_epoch = epoch;
      best = model.params;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!rec.improved && since_best > cfg.patience) break;
  }
  detail::copy_values(model.params, best);
  model.params.zero_grad();
  result.model = std::move(model);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct SampleTrace {
  std::string id;
  AttentionTrace trace;
};

struct EvalResult {
  MetricReport report;
  std::vector<LabelSequence> hypotheses;
  std::vector<SampleTrace> traces;  // stan models only
};

struct EvalOptions {
  std::size_t batch_size = 32;
  bool keep_traces = false;
  std::size_t max_samples = 0;  // 0: all
};

template <typename Real>
EvalResult evaluate(const StanModel<Real>& model, const std::vector<Sample>& test, const EvalCondition& cond,
                    const EvalOptions& opt = {}) {
  const std::size_t sensors = model.spec.sensors.size();
  const std::size_t copies = cond.copies ? cond.copies : sensors;
  require(copies == sensors || sensors == 1, ErrorKind::config,
          "evaluate: " + std::to_string(copies) + " input copies for a " + std::to_string(sensors) + "-sensor model");
  const std::size_t n = opt.max_samples ? std::min(opt.max_samples, test.size()) : test.size();
  require(n > 0, ErrorKind::input, "evaluate: empty test set");
  for (const auto& s : model.spec.sensors)
    require(s.input_dim() == test[0].features.dim(), ErrorKind::dimension,
            "evaluate: model expects " + std::to_string(s.input_dim()) + "-dimensional input, corpus has " +
                std::to_string(test[0].features.dim()));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return test[a].features.length() < test[b].features.length(); });

  EvalResult out;
  out.hypotheses.resize(n);
  if (opt.keep_traces && model.spec.architecture == Architecture::stan) out.traces.resize(n);
  for (std::size_t start = 0; start < n; start += opt.batch_size) {
    const std::size_t end = std::min(n, start + opt.batch_size);
    std::vector<std::vector<FeatureSequence>> inputs;
    std::vector<std::vector<NoiseSchedule>> schedules;
    for (std::size_t k = start; k < end; ++k) {
      const std::size_t s = order[k];
      auto c = corrupt_for_condition(test[s].features, cond, copies, s);
      if (sensors == 1 && copies > 1) c.copies = {average_copies(c.copies)};
      inputs.push_back(std::move(c.copies));
      schedules.push_back(std::move(c.schedules));
    }
    const auto fwd = forward(model, detail::batch_from_copies<Real>(inputs, sensors));
    auto hyps = decode_batch(fwd);
    for (std::size_t k = start; k < end; ++k) {
      const std::size_t s = order[k], b = k - start;
      out.hypotheses[s] = std::move(hyps[b]);
      if (out.traces.empty()) continue;
      auto& tr = out.traces[s];
      tr.id = test[s].features.id;
      const std::size_t T = test[s].features.length();
      for (std::size_t i = 0; i < sensors; ++i) {
        tr.trace.sigma.push_back(schedules[b][i].sigma);
        std::vector<double> w(T);
        for (std::size_t t = 0; t < T; ++t)
          w[t] = static_cast<double>(fwd.attention(static_cast<Eigen::Index>(t * fwd.batch + b), static_cast<Eigen::Index>(i)));
        tr.trace.weights.push_back(std::move(w));
      }
    }
  }
  std::vector<LabelSequence> refs;
  for (std::size_t s = 0; s < n; ++s) refs.push_back(test[s].labels);
  out.report = MetricReport::compute(refs, out.hypotheses);
  return out;
}

}  // namespace stan
