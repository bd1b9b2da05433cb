#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace avband {

enum class ErrorKind {
  kInvalidArgument,
  kEmptySet,
  kMixedDirections,
  kMalformedCsv,
  kNonPositiveDelay,
  kEmptyPath,
  kNegativeResidual,
  kInterceptExceedsDelay,
  kNonIncreasingDelay,
  kSizeOrder,
  kNonPositiveDenominator,
  kDegenerateInput,
  kInsufficientData,
  kMalformedLine,
  kMalformedConfig,
  kUnstableHop,
  kResolveFailure,
  kPermissionDenied,
  kUnreachable,
  kIo,
};

inline constexpr std::string_view ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument: return "InvalidArgument";
    case ErrorKind::kEmptySet: return "EmptySet";
    case ErrorKind::kMixedDirections: return "MixedDirections";
    case ErrorKind::kMalformedCsv: return "MalformedCsv";
    case ErrorKind::kNonPositiveDelay: return "NonPositiveDelay";
    case ErrorKind::kEmptyPath: return "EmptyPath";
    case ErrorKind::kNegativeResidual: return "NegativeResidual";
    case ErrorKind::kInterceptExceedsDelay: return "InterceptExceedsDelay";
    case ErrorKind::kNonIncreasingDelay: return "NonIncreasingDelay";
    case ErrorKind::kSizeOrder: return "SizeOrder";
    case ErrorKind::kNonPositiveDenominator: return "NonPositiveDenominator";
    case ErrorKind::kDegenerateInput: return "DegenerateInput";
    case ErrorKind::kInsufficientData: return "InsufficientData";
    case ErrorKind::kMalformedLine: return "MalformedLine";
    case ErrorKind::kMalformedConfig: return "MalformedConfig";
    case ErrorKind::kUnstableHop: return "UnstableHop";
    case ErrorKind::kResolveFailure: return "ResolveFailure";
    case ErrorKind::kPermissionDenied: return "PermissionDenied";
    case ErrorKind::kUnreachable: return "Unreachable";
    case ErrorKind::kIo: return "Io";
  }
  return "Unknown";
}

// Every failure raised by the library carries a machine-checkable kind; the
// message is prefixed with the kind name so CLI diagnostics stay greppable.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(ErrorKindName(kind)) + ": " + what),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Non-fatal diagnostics accumulated alongside a result.
using Warnings = std::vector<std::string>;

}  // namespace avband
