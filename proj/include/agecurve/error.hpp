#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace agecurve {

enum class ErrorCode {
  InvalidArgument,
  InvalidKnots,
  OutOfDomain,
  SingularFit,
  BasisMismatch,
  InsufficientData,
  NumericalError,
  SparseCoverage,
  CovarianceUnidentified,
  CVUndefined,
  NearPeakUndefined,
  EmptyGroup,
  ZeroMargin,
  InvalidK,
  IoError,
  SchemaError,
  InvalidDate,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidKnots: return "InvalidKnots";
    case ErrorCode::OutOfDomain: return "OutOfDomain";
    case ErrorCode::SingularFit: return "SingularFit";
    case ErrorCode::BasisMismatch: return "BasisMismatch";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::NumericalError: return "NumericalError";
    case ErrorCode::SparseCoverage: return "SparseCoverage";
    case ErrorCode::CovarianceUnidentified: return "CovarianceUnidentified";
    case ErrorCode::CVUndefined: return "CVUndefined";
    case ErrorCode::NearPeakUndefined: return "NearPeakUndefined";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::ZeroMargin: return "ZeroMargin";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::InvalidDate: return "InvalidDate";
  }
  return "Unknown";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace agecurve
