#include "metasel/error.hpp"

namespace metasel {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::SchemaMismatch: return "schema-mismatch";
    case ErrorKind::DegenerateSample: return "degenerate-sample";
    case ErrorKind::InvalidSample: return "invalid-sample";
    case ErrorKind::EmptySubset: return "empty-subset";
    case ErrorKind::InvalidDistribution: return "invalid-distribution";
    case ErrorKind::NoCells: return "no-cells";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::InsufficientBatch: return "insufficient-batch";
    case ErrorKind::DegenerateBatch: return "degenerate-batch";
    case ErrorKind::TrainingFailed: return "training-failed";
    case ErrorKind::EmptyCorpus: return "empty-corpus";
    case ErrorKind::SizeLimit: return "size-limit";
    case ErrorKind::ProviderUnavailable: return "provider-unavailable";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::InsufficientTrace: return "insufficient-trace";
    case ErrorKind::InvalidTrace: return "invalid-trace";
    case ErrorKind::InvalidProfile: return "invalid-profile";
    case ErrorKind::InvalidConfig: return "invalid-config";
    case ErrorKind::ZeroSuccess: return "zero-success";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace metasel
