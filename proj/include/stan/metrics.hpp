// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include <json.hpp>

#include "stan/errors.hpp"

namespace stan {

struct EditCounts {
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;
  std::size_t distance = 0;

  EditCounts& operator+=(const EditCounts& o) {
    substitutions += o.substitutions;
    deletions += o.deletions;
    insertions += o.insertions;
    distance += o.distance;
    return *this;
  }
};

// Unit-cost Levenshtein alignment of `hyp` against `ref`. On equal-cost
// alternatives the backtrace prefers match/substitution, then deletion.
template <typename Seq>
EditCounts edit_distance(const Seq& ref, const Seq& hyp) {
  const std::size_t n = std::size(ref), m = std::size(hyp);
  std::vector<std::size_t> dp((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return dp[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      at(i, j) = std::min({sub, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  EditCounts c;
  c.distance = at(n, m);
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) ++c.substitutions;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++c.deletions;
      --i;
    } else {
      ++c.insertions;
      --j;
    }
  }
  return c;
}

// Sequence error rate in percent: share of hypotheses that differ from their
// reference in any way.
template <typename Seq>
double ser(const std::vector<Seq>& refs, const std::vector<Seq>& hyps) {
  require(refs.size() == hyps.size(), ErrorKind::input, "ser: reference/hypothesis count mismatch");
  require(!refs.empty(), ErrorKind::input, "ser: empty evaluation set");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) correct += (refs[i] == hyps[i]) ? 1 : 0;
  return 100.0 * static_cast<double>(refs.size() - correct) / static_cast<double>(refs.size());
}

// Pooled word error rate in percent: (S + D + I) / N over the whole corpus.
template <typename Seq>
double wer(const std::vector<Seq>& refs, const std::vector<Seq>& hyps, EditCounts* totals = nullptr) {
  require(refs.size() == hyps.size(), ErrorKind::input, "wer: reference/hypothesis count mismatch");
  EditCounts sum;
  std::size_t words = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    sum += edit_distance(refs[i], hyps[i]);
    words += std::size(refs[i]);
  }
  require(words > 0, ErrorKind::input, "wer: reference corpus has no words");
  if (totals) *totals = sum;
  return 100.0 * static_cast<double>(sum.distance) / static_cast<double>(words);
}

struct MetricReport {
  double ser = 0.0;
  double wer = 0.0;
  EditCounts edits;
  std::size_t n_sequences = 0;
  std::size_t n_words = 0;

  template <typename Seq>
  static MetricReport compute(const std::vector<Seq>& refs, const std::vector<Seq>& hyps) {
    MetricReport r;
    r.ser = stan::ser(refs, hyps);
    r.n_sequences = refs.size();
    for (const auto& s : refs) r.n_words += std::size(s);
    if (r.n_words > 0) r.wer = stan::wer(refs, hyps, &r.edits);
    return r;
  }

  nlohmann::ordered_json to_json() const {
    return {{"ser", ser},
            {"wer", wer},
            {"substitutions", edits.substitutions},
            {"deletions", edits.deletions},
            {"insertions", edits.insertions},
            {"n_sequences", n_sequences},
            {"n_words", n_words}};
  }
};

}  // namespace stan
