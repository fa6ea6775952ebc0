#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mordal {

// Error categories. The CLI maps each to a distinct exit code and prints the
// category name on stderr so failures are machine-parseable.
enum class ErrorKind {
  kDimension,
  kInput,
  kDegenerate,
  kEstimator,
  kLookup,
  kSpec,
  kTrace,
  kUnsupportedRatio,
  kOracle,
  kProtocol,
  kConfig,
  kIo,
  kSchema,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kInput: return "input";
    case ErrorKind::kDegenerate: return "degenerate";
    case ErrorKind::kEstimator: return "estimator";
    case ErrorKind::kLookup: return "lookup";
    case ErrorKind::kSpec: return "spec";
    case ErrorKind::kTrace: return "trace";
    case ErrorKind::kUnsupportedRatio: return "unsupported-ratio";
    case ErrorKind::kOracle: return "oracle";
    case ErrorKind::kProtocol: return "protocol";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kSchema: return "schema";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Oracle and protocol failures keep the raw payload that triggered them.
class OracleError : public Error {
 public:
  OracleError(ErrorKind kind, const std::string& message, std::string payload = {})
      : Error(kind, message), payload_(std::move(payload)) {}

  const std::string& payload() const noexcept { return payload_; }

 private:
  std::string payload_;
};

}  // namespace mordal
