#include "shadeadapt/errors.hpp"

namespace shadeadapt {

const char* error_kind_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Request: return "request";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Ingest: return "ingest";
    case ErrorKind::Load: return "load";
    case ErrorKind::Io: return "io";
    case ErrorKind::Internal: return "internal";
  }
  return "internal";
}

}  // namespace shadeadapt
