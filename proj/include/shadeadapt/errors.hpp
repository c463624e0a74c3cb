#pragma once

#include <stdexcept>
#include <string>

namespace shadeadapt {

/// Failure categories. The names double as the machine-parsable prefix the
/// CLI prints on failure and map one-to-one onto the C API status codes.
enum class ErrorKind {
  Config,    // invalid configuration or unknown parameter group
  Request,   // a call's arguments violate its preconditions
  Numeric,   // non-finite values during compute
  Ingest,    // dataset layout / pairing problems
  Load,      // checkpoint incompatible with the current build or config
  Io,        // filesystem failures
  Internal,  // broken internal invariant
};

const char* error_kind_name(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error(ErrorKind::Config, m) {}
};
struct RequestError : Error {
  explicit RequestError(const std::string& m) : Error(ErrorKind::Request, m) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& m) : Error(ErrorKind::Numeric, m) {}
};
struct IngestError : Error {
  explicit IngestError(const std::string& m) : Error(ErrorKind::Ingest, m) {}
};
struct LoadError : Error {
  explicit LoadError(const std::string& m) : Error(ErrorKind::Load, m) {}
};
struct IoError : Error {
  explicit IoError(const std::string& m) : Error(ErrorKind::Io, m) {}
};
struct InternalError : Error {
  explicit InternalError(const std::string& m) : Error(ErrorKind::Internal, m) {}
};

}  // namespace shadeadapt
