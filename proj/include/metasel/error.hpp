#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace metasel {

enum class ErrorKind {
  SchemaMismatch,
  DegenerateSample,
  InvalidSample,
  EmptySubset,
  InvalidDistribution,
  NoCells,
  InsufficientData,
  Shape,
  Numeric,
  InsufficientBatch,
  DegenerateBatch,
  TrainingFailed,
  EmptyCorpus,
  SizeLimit,
  ProviderUnavailable,
  Parse,
  InsufficientTrace,
  InvalidTrace,
  InvalidProfile,
  InvalidConfig,
  ZeroSuccess,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it onto an exit code without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message);

}  // namespace metasel
