#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fastaid {

enum class ErrorCode {
  MalformedHeader,
  UnsupportedDatatype,
  TruncatedData,
  IoFailure,
  SingularAffine,
  ConstantVolume,
  EmptyForeground,
  SchemaError,
  ShapeMismatch,
  BothEmpty,
  AllZeroDifferences,
  InsufficientSamples,
  LengthMismatch,
  ZeroBaseline,
  DivergenceDetected,
  ModelShapeMismatch,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

/// Domain error carrying a category the CLI maps onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fastaid
