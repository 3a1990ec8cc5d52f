// Copyright 2026 The STAN Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace stan {

// Error categories. The CLI maps each category onto a distinct exit code.
enum class ErrorKind {
  config,          // invalid configuration or parameters
  dimension,       // shape disagreement between operands
  empty_sequence,  // zero-length input where frames are required
  numeric,         // NaN/Inf encountered
  format,          // malformed on-disk data
  feasibility,     // CTC label sequence cannot be aligned to the input
  input,           // missing or inconsistent model inputs
  graft,           // incompatible front/body checkpoints
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::empty_sequence: return "empty-sequence";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::format: return "format";
    case ErrorKind::feasibility: return "feasibility";
    case ErrorKind::input: return "input";
    case ErrorKind::graft: return "graft";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

}  // namespace stan
