// Copyright 2026 The drugloc Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <iostream>
#include <span>
#include <stdexcept>
#include <string>

namespace drugloc {

/// Failure categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind {
  kInvalidArgument,  // caller passed something outside an operation's contract
  kMissingFile,
  kMalformedConfig,
  kSchemaMismatch,   // input file parsed but does not have the expected layout
  kModelLoad,
  kNotFound,
  kDataset,          // dictionary too small, no valid pairing, ...
  kNumerical,        // non-finite values
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return 2;
    case ErrorKind::kMalformedConfig: return 3;
    case ErrorKind::kMissingFile: return 4;
    case ErrorKind::kSchemaMismatch: return 5;
    case ErrorKind::kModelLoad: return 6;
    case ErrorKind::kNotFound: return 7;
    case ErrorKind::kDataset: return 8;
    case ErrorKind::kNumerical: return 9;
  }
  return 1;
}

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "invalid_argument";
    case ErrorKind::kMalformedConfig: return "malformed_config";
    case ErrorKind::kMissingFile: return "missing_file";
    case ErrorKind::kSchemaMismatch: return "schema_mismatch";
    case ErrorKind::kModelLoad: return "model_load";
    case ErrorKind::kNotFound: return "not_found";
    case ErrorKind::kDataset: return "dataset";
    case ErrorKind::kNumerical: return "numerical";
  }
  return "unknown";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

inline void require_finite(std::span<const float> values, const std::string& what) {
  for (float v : values) {
    if (!std::isfinite(v)) fail(ErrorKind::kNumerical, what + ": non-finite value");
  }
}

// Warning sink. Tests swap it to observe warnings.
using WarningSink = std::function<void(const std::string&)>;

inline WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(const std::string& msg) { warning_sink()(msg); }

}  // namespace drugloc
