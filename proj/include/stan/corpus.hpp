// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdio>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "stan/ctc.hpp"
#include "stan/errors.hpp"
#include "stan/features.hpp"
#include "stan/io.hpp"
#include "stan/rng.hpp"

namespace stan {

// Synthetic multi-symbol sequence task. Each symbol occupies a run of frames
// whose D-dimensional pattern is a windowed sinusoid per dimension: a pattern
// shared by all classes plus `class_separation` times a class-specific one.
// Samples jitter amplitude, phase and frame values.
struct SyntheticTaskSpec {
  std::size_t vocabulary_size = 11;
  std::size_t feature_dim = 39;
  std::size_t min_duration = 30;  // frames per symbol
  std::size_t max_duration = 58;
  std::size_t min_symbols = 1;
  std::size_t max_symbols = 7;
  std::size_t train_samples = 2000;
  std::size_t test_samples = 500;
  double jitter = 0.1;
  double class_separation = 0.15;
  std::uint64_t seed = 1;

  void validate() const {
    require(vocabulary_size >= 2, ErrorKind::config, "corpus: vocabulary_size must be >= 2");
    require(feature_dim >= 1, ErrorKind::config, "corpus: feature_dim must be >= 1");
    require(min_duration >= 3 && min_duration <= max_duration, ErrorKind::config,
            "corpus: need 3 <= min_duration <= max_duration");
    require(min_symbols >= 1 && min_symbols <= max_symbols, ErrorKind::config,
            "corpus: need 1 <= min_symbols <= max_symbols");
    require(jitter >= 0.0, ErrorKind::config, "corpus: jitter must be >= 0");
    require(class_separation > 0.0, ErrorKind::config, "corpus: class_separation must be > 0");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SyntheticTaskSpec, vocabulary_size, feature_dim, min_duration,
                                                max_duration, min_symbols, max_symbols, train_samples, test_samples,
                                                jitter, class_separation, seed)

struct ClassSignature {
  std::vector<double> amplitude, frequency, phase, offset;  // per dimension
};

struct Normalization {
  std::vector<double> mean, std;
};

struct Corpus {
  SyntheticTaskSpec task;
  std::vector<Sample> train;
  std::vector<Sample> test;
  Normalization normalization;
  std::size_t feature_dim() const { return task.feature_dim; }
};

inline std::vector<ClassSignature> class_signatures(const SyntheticTaskSpec& spec) {
  Prng prng = Prng::derive(spec.seed, {stream::corpus_signature});
  // slot 0 holds the shared pattern
  std::vector<ClassSignature> sigs(spec.vocabulary_size + 1);
  for (std::size_t c = 0; c <= spec.vocabulary_size; ++c) {
    auto& s = sigs[c];
    for (std::size_t k = 0; k < spec.feature_dim; ++k) {
      s.amplitude.push_back(prng.uniform(0.5, 1.5));
      s.frequency.push_back(prng.uniform(0.5, 3.0));
      s.phase.push_back(prng.uniform(0.0, 2.0 * std::numbers::pi));
      s.offset.push_back(prng.uniform(-0.5, 0.5));
    }
  }
  return sigs;
}

// Unnormalized sample `index` of a split; one derived generator per sample.
inline Sample synthesize_sample(const SyntheticTaskSpec& spec, const std::vector<ClassSignature>& sigs,
                                std::uint64_t split_stream, std::size_t index) {
  Prng prng = Prng::derive(spec.seed, {split_stream, index});
  const auto span = [&](std::size_t lo, std::size_t hi) { return lo + prng.next_u32() % (hi - lo + 1); };
  const std::size_t n = span(spec.min_symbols, spec.max_symbols);
  LabelSequence labels(n);
  std::vector<std::size_t> durations(n);
  std::size_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = 1 + static_cast<int>(prng.next_u32() % spec.vocabulary_size);
    durations[i] = span(spec.min_duration, spec.max_duration);
    total += durations[i];
  }
  char id[48];
  std::snprintf(id, sizeof id, "%s-%06zu", split_stream == stream::corpus_train ? "train" : "test", index);
  Sample s{FeatureSequence(total, spec.feature_dim, id), labels};
  std::size_t t0 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& sig = sigs[static_cast<std::size_t>(labels[i])];
    const auto& common = sigs[0];
    const double amp = 1.0 + spec.jitter * prng.normal();
    const double shift = spec.jitter * prng.normal();
    for (std::size_t j = 0; j < durations[i]; ++j) {
      const double u = (static_cast<double>(j) + 0.5) / static_cast<double>(durations[i]);
      const double window = std::sin(std::numbers::pi * u);
      const auto pattern = [&](const ClassSignature& g, std::size_t k) {
        return g.offset[k] + amp * g.amplitude[k] * std::sin(2.0 * std::numbers::pi * g.frequency[k] * u + g.phase[k] + shift);
      };
      for (std::size_t k = 0; k < spec.feature_dim; ++k) {
        const double v = window * (pattern(common, k) + spec.class_separation * pattern(sig, k)) +
                         spec.jitter * prng.normal();
        s.features.frames(static_cast<Eigen::Index>(t0 + j), static_cast<Eigen::Index>(k)) = static_cast<float>(v);
      }
    }
    t0 += durations[i];
  }
  return s;
}

inline Normalization corpus_statistics(const std::vector<const std::vector<Sample>*>& splits, std::size_t dim) {
  std::vector<double> sum(dim, 0.0), sq(dim, 0.0);
  double count = 0;
  for (const auto* split : splits)
    for (const auto& s : *split) {
      const auto& f = s.features.frames;
      for (Eigen::Index t = 0; t < f.rows(); ++t)
        for (std::size_t k = 0; k < dim; ++k) sum[k] += f(t, static_cast<Eigen::Index>(k));
      count += static_cast<double>(f.rows());
    }
  require(count > 0, ErrorKind::empty_sequence, "corpus statistics over zero frames");
  Normalization n;
  for (std::size_t k = 0; k < dim; ++k) n.mean.push_back(sum[k] / count);
  for (const auto* split : splits)
    for (const auto& s : *split) {
      const auto& f = s.features.frames;
      for (Eigen::Index t = 0; t < f.rows(); ++t)
        for (std::size_t k = 0; k < dim; ++k) {
          const double d = f(t, static_cast<Eigen::Index>(k)) - n.mean[k];
          sq[k] += d * d;
        }
    }
  for (std::size_t k = 0; k < dim; ++k) n.std.push_back(std::sqrt(sq[k] / count));
  return n;
}

inline void normalize(std::vector<Sample>& split, const Normalization& n) {
  for (auto& s : split) {
    auto& f = s.features.frames;
    for (Eigen::Index t = 0; t < f.rows(); ++t)
      for (Eigen::Index k = 0; k < f.cols(); ++k) {
        const auto kk = static_cast<std::size_t>(k);
        const double sd = n.std[kk] > 0 ? n.std[kk] : 1.0;
        f(t, k) = static_cast<float>((f(t, k) - n.mean[kk]) / sd);
      }
  }
}

// Train and test splits from disjoint generator streams, normalized per
// dimension over every frame of both splits.
inline Corpus generate_corpus(const SyntheticTaskSpec& spec) {
  spec.validate();
  const auto sigs = class_signatures(spec);
  Corpus c;
  c.task = spec;
  for (std::size_t i = 0; i < spec.train_samples; ++i)
    c.train.push_back(synthesize_sample(spec, sigs, stream::corpus_train, i));
  for (std::size_t i = 0; i < spec.test_samples; ++i)
    c.test.push_back(synthesize_sample(spec, sigs, stream::corpus_test, i));
  c.normalization = corpus_statistics({&c.train, &c.test}, spec.feature_dim);
  normalize(c.train, c.normalization);
  normalize(c.test, c.normalization);
  return c;
}

// ---------------------------------------------------------------------------
// Feature container: one sample per file, all integers little-endian.
//   "STNF" | u32 version | u32 D | u32 T | u32 flags | u32 id bytes | id
//   | u32 L | L x u32 labels | T*D x f32 (row-major)

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::uint32_t kFlagNormalized = 1;

inline Bytes encode_container(const Sample& s, bool normalized = true) {
  ByteWriter w;
  w.raw("STNF");
  w.u32(kContainerVersion);
  w.u32(static_cast<std::uint32_t>(s.features.dim()));
  w.u32(static_cast<std::uint32_t>(s.features.length()));
  w.u32(normalized ? kFlagNormalized : 0);
  w.u32(static_cast<std::uint32_t>(s.features.id.size()));
  w.raw(s.features.id);
  w.u32(static_cast<std::uint32_t>(s.labels.size()));
  for (int l : s.labels) w.u32(static_cast<std::uint32_t>(l));
  const float* p = s.features.frames.data();
  for (Eigen::Index i = 0; i < s.features.frames.size(); ++i) w.f32(p[i]);
  return w.take();
}

inline Sample decode_container(const Bytes& bytes, const std::string& what = "container", bool* normalized = nullptr) {
  ByteReader r(bytes.data(), bytes.size(), what);
  if (r.raw(4) != "STNF") fail(ErrorKind::format, what + ": bad magic");
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion)
    fail(ErrorKind::format, what + ": unsupported version " + std::to_string(version));
  const std::uint32_t dim = r.u32();
  const std::uint32_t frames = r.u32();
  const std::uint32_t flags = r.u32();
  if (normalized) *normalized = (flags & kFlagNormalized) != 0;
  const std::string id = r.raw(r.u32());
  const std::uint32_t n_labels = r.u32();
  r.need(static_cast<std::size_t>(n_labels) * 4);
  LabelSequence labels(n_labels);
  for (auto& l : labels) {
    const std::uint32_t v = r.u32();
    if (v == 0 || v > 0x7fffffffu) fail(ErrorKind::format, what + ": invalid label " + std::to_string(v));
    l = static_cast<int>(v);
  }
  const std::size_t payload = static_cast<std::size_t>(dim) * frames * 4;
  if (r.remaining() != payload)
    fail(ErrorKind::format, what + ": header says " + std::to_string(frames) + "x" + std::to_string(dim) + " (" +
                                std::to_string(payload) + " bytes) but payload has " + std::to_string(r.remaining()));
  Sample s{FeatureSequence(frames, dim, id), labels};
  float* p = s.features.frames.data();
  for (std::size_t i = 0; i < static_cast<std::size_t>(dim) * frames; ++i) p[i] = r.f32();
  return s;
}

inline void write_container(const fs::path& path, const Sample& s, bool normalized = true) {
  write_file_atomic(path, encode_container(s, normalized));
}

inline Sample read_container(const fs::path& path) { return decode_container(read_file(path), path.string()); }

// ---------------------------------------------------------------------------
// Corpus directory: manifest.json plus one container per sample.

inline nlohmann::ordered_json corpus_manifest(const Corpus& c, const std::vector<std::string>& train_files,
                                              const std::vector<std::string>& test_files) {
  nlohmann::ordered_json j;
  j["format"] = "stnf";
  j["version"] = kContainerVersion;
  j["task"] = nlohmann::ordered_json(nlohmann::json(c.task));
  j["feature_dim"] = c.task.feature_dim;
  j["normalization"] = {{"mean", c.normalization.mean}, {"std", c.normalization.std}};
  j["splits"] = {{"train", train_files}, {"test", test_files}};
  return j;
}

inline void save_corpus(const fs::path& dir, const Corpus& c) {
  std::vector<std::string> train_files, test_files;
  for (const auto& s : c.train) {
    train_files.push_back("train/" + s.features.id + ".stnf");
    write_container(dir / train_files.back(), s);
  }
  for (const auto& s : c.test) {
    test_files.push_back("test/" + s.features.id + ".stnf");
    write_container(dir / test_files.back(), s);
  }
  write_json_atomic(dir / "manifest.json", corpus_manifest(c, train_files, test_files));
}

inline Corpus load_corpus(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, manifest_path.string() + ": " + e.what());
  }
  if (j.value("format", std::string()) != "stnf") fail(ErrorKind::format, manifest_path.string() + ": not a corpus");
  Corpus c;
  try {
    if (j.contains("task")) c.task = j.at("task").get<SyntheticTaskSpec>();
    c.task.feature_dim = j.at("feature_dim").get<std::size_t>();
    c.normalization.mean = j.at("normalization").at("mean").get<std::vector<double>>();
    c.normalization.std = j.at("normalization").at("std").get<std::vector<double>>();
    for (const auto& f : j.at("splits").at("train")) c.train.push_back(read_container(dir / f.get<std::string>()));
    for (const auto& f : j.at("splits").at("test")) c.test.push_back(read_container(dir / f.get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, manifest_path.string() + ": " + e.what());
  }
  for (const auto* split : {&c.train, &c.test})
    for (const auto& s : *split)
      require(s.features.dim() == c.task.feature_dim, ErrorKind::format,
              "sample '" + s.features.id + "' has dimension " + std::to_string(s.features.dim()) + ", corpus has " +
                  std::to_string(c.task.feature_dim));
  return c;
}

}  // namespace stan
