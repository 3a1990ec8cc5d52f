// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <set>

#include "stan/corpus.hpp"

using namespace stan;

namespace {

SyntheticTaskSpec small_task(std::uint64_t seed = 7) {
  SyntheticTaskSpec t;
  t.train_samples = 60;
  t.test_samples = 20;
  t.seed = seed;
  return t;
}

bool bit_equal(const FeatureSequence& a, const FeatureSequence& b) {
  return a.id == b.id && a.frames.rows() == b.frames.rows() && a.frames.cols() == b.frames.cols() &&
         std::memcmp(a.frames.data(), b.frames.data(), sizeof(float) * static_cast<std::size_t>(a.frames.size())) == 0;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("stan-test-" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("same seed gives a byte-identical corpus", "[corpus]") {
  const auto a = generate_corpus(small_task());
  const auto b = generate_corpus(small_task());
  REQUIRE(a.train.size() == 60);
  REQUIRE(a.test.size() == 20);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(encode_container(a.train[i]) == encode_container(b.train[i]));
  }
  for (std::size_t i = 0; i < a.test.size(); ++i) CHECK(encode_container(a.test[i]) == encode_container(b.test[i]));
  const auto c = generate_corpus(small_task(8));
  CHECK_FALSE(encode_container(a.train[0]) == encode_container(c.train[0]));
}

TEST_CASE("sample shape follows the task spec", "[corpus]") {
  const auto spec = small_task();
  const auto c = generate_corpus(spec);
  for (const auto* split : {&c.train, &c.test}) {
    for (const auto& s : *split) {
      const std::size_t L = s.labels.size();
      REQUIRE(L >= spec.min_symbols);
      REQUIRE(L <= spec.max_symbols);
      CHECK(s.features.dim() == spec.feature_dim);
      CHECK(s.features.length() >= L * spec.min_duration);
      CHECK(s.features.length() <= L * spec.max_duration);
      for (int l : s.labels) {
        CHECK(l >= 1);
        CHECK(l <= static_cast<int>(spec.vocabulary_size));
      }
    }
  }
}

TEST_CASE("mean sequence length is near 175 frames with the default shape", "[corpus]") {
  SyntheticTaskSpec spec;
  spec.train_samples = 400;
  spec.test_samples = 1;
  const auto c = generate_corpus(spec);
  double total = 0;
  for (const auto& s : c.train) total += static_cast<double>(s.features.length());
  const double mean = total / static_cast<double>(c.train.size());
  CHECK(mean > 150.0);
  CHECK(mean < 200.0);
}

TEST_CASE("normalization gives zero mean and unit deviation over all frames", "[corpus]") {
  const auto c = generate_corpus(small_task());
  const std::size_t D = c.feature_dim();
  std::vector<double> sum(D, 0.0), sq(D, 0.0);
  double n = 0;
  for (const auto* split : {&c.train, &c.test})
    for (const auto& s : *split) {
      const Matrix<double> f = s.features.frames.cast<double>();
      for (Eigen::Index t = 0; t < f.rows(); ++t)
        for (std::size_t k = 0; k < D; ++k) {
          const double v = f(t, static_cast<Eigen::Index>(k));
          sum[k] += v;
          sq[k] += v * v;
        }
      n += static_cast<double>(f.rows());
    }
  for (std::size_t k = 0; k < D; ++k) {
    const double mean = sum[k] / n;
    const double sd = std::sqrt(sq[k] / n - mean * mean);
    CHECK(std::abs(mean) <= 1e-6);
    CHECK(std::abs(sd - 1.0) <= 1e-6);
  }
}

TEST_CASE("train and test streams are disjoint", "[corpus]") {
  const std::set<std::uint64_t> ids = {stream::corpus_train, stream::corpus_test, stream::corpus_signature,
                                       stream::init,         stream::shuffle,     stream::train_noise,
                                       stream::valid_noise,  stream::eval_noise,  stream::preview};
  CHECK(ids.size() == 9);

  const auto spec = small_task();
  const auto sigs = class_signatures(spec);
  // Same index in the two splits draws from different streams.
  for (std::size_t i = 0; i < 10; ++i) {
    const auto tr = synthesize_sample(spec, sigs, stream::corpus_train, i);
    const auto te = synthesize_sample(spec, sigs, stream::corpus_test, i);
    CHECK_FALSE((tr.labels == te.labels && tr.features.frames == te.features.frames));
  }
  const auto c = generate_corpus(spec);
  std::set<std::string> names;
  for (const auto& s : c.train) names.insert(s.features.id);
  for (const auto& s : c.test) names.insert(s.features.id);
  CHECK(names.size() == c.train.size() + c.test.size());
}

TEST_CASE("task spec validation", "[corpus]") {
  auto bad = [](auto mutate) {
    SyntheticTaskSpec s;
    mutate(s);
    return s;
  };
  CHECK_THROWS_AS(bad([](auto& s) { s.vocabulary_size = 1; }).validate(), Error);
  CHECK_THROWS_AS(bad([](auto& s) { s.min_duration = 60; }).validate(), Error);
  CHECK_THROWS_AS(bad([](auto& s) { s.min_symbols = 0; }).validate(), Error);
  CHECK_THROWS_AS(bad([](auto& s) { s.class_separation = 0; }).validate(), Error);
  CHECK_NOTHROW(SyntheticTaskSpec{}.validate());
}

TEST_CASE("container round trip is bit exact", "[container]") {
  Prng prng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Sample s;
    const std::size_t T = 1 + prng.next_u32() % 50, D = 1 + prng.next_u32() % 40;
    s.features = FeatureSequence(T, D, "sample-" + std::to_string(trial));
    for (Eigen::Index i = 0; i < s.features.frames.size(); ++i)
      s.features.frames.data()[i] = static_cast<float>(prng.normal() * 1e3);
    const std::size_t L = prng.next_u32() % 5;
    for (std::size_t l = 0; l < L; ++l) s.labels.push_back(1 + static_cast<int>(prng.next_u32() % 10));
    bool normalized = false;
    const auto back = decode_container(encode_container(s, trial % 2 == 0), "x", &normalized);
    CHECK(bit_equal(back.features, s.features));
    CHECK(back.labels == s.labels);
    CHECK(normalized == (trial % 2 == 0));
  }
}

TEST_CASE("container permits an empty label sequence", "[container]") {
  Sample s;
  s.features = FeatureSequence(4, 3, "empty-labels");
  const auto back = decode_container(encode_container(s));
  CHECK(back.labels.empty());
  CHECK(back.features.length() == 4);
}

TEST_CASE("container format errors", "[container]") {
  Sample s;
  s.features = FeatureSequence(5, 3, "x");
  s.labels = {1, 2};
  const Bytes good = encode_container(s);
  auto kind_of = [](const Bytes& b) {
    try {
      decode_container(b);
    } catch (const Error& e) {
      return e.kind();
    }
    FAIL("no error raised");
    return ErrorKind::input;
  };

  Bytes magic = good;
  magic[0] = 'X';
  CHECK(kind_of(magic) == ErrorKind::format);

  Bytes version = good;
  version[4] = 2;
  CHECK(kind_of(version) == ErrorKind::format);

  Bytes truncated(good.begin(), good.end() - 4);
  CHECK(kind_of(truncated) == ErrorKind::format);

  Bytes extra = good;
  extra.push_back(0);
  CHECK(kind_of(extra) == ErrorKind::format);

  Bytes header_only(good.begin(), good.begin() + 6);
  CHECK(kind_of(header_only) == ErrorKind::format);

  // D*T in the header disagrees with the payload
  Bytes dims = good;
  dims[8] = 4;  // D: 3 -> 4
  CHECK(kind_of(dims) == ErrorKind::format);
}

TEST_CASE("corpus save and load", "[corpus][io]") {
  TempDir dir("corpus");
  const auto c = generate_corpus(small_task());
  save_corpus(dir.path, c);
  CHECK(fs::exists(dir.path / "manifest.json"));
  CHECK(fs::exists(dir.path / "train" / (c.train[0].features.id + ".stnf")));
  const auto back = load_corpus(dir.path);
  REQUIRE(back.train.size() == c.train.size());
  REQUIRE(back.test.size() == c.test.size());
  for (std::size_t i = 0; i < c.train.size(); ++i) {
    CHECK(bit_equal(back.train[i].features, c.train[i].features));
    CHECK(back.train[i].labels == c.train[i].labels);
  }
  CHECK(back.task.seed == c.task.seed);
  CHECK(back.normalization.mean == c.normalization.mean);

  const auto j = nlohmann::json::parse(read_text(dir.path / "manifest.json"));
  CHECK(j.at("normalization").at("mean").size() == c.feature_dim());
  CHECK(j.at("splits").at("train").size() == c.train.size());

  // The saved bytes do not depend on the process.
  TempDir again("corpus-again");
  save_corpus(again.path, generate_corpus(small_task()));
  CHECK(read_file(again.path / "manifest.json") == read_file(dir.path / "manifest.json"));
}

TEST_CASE("loading a missing corpus is an input error", "[corpus][io]") {
  try {
    load_corpus(fs::temp_directory_path() / "stan-test-does-not-exist");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::input);
  }
}
