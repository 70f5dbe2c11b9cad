#pragma once

// Error vocabulary shared by every module. All failures are reported by
// throwing late_bounds::Error; the code identifies the condition and the
// category decides the CLI exit status.

#include <stdexcept>
#include <string>
#include <string_view>

namespace late_bounds {

enum class Errc {
  // dataset validation
  EmptyArm,
  InvalidArm,
  OutOfRangeEngagement,
  ControlEngagement,
  NonFiniteOutcome,
  ZeroInstrument,
  CovariateArity,
  MissingValue,
  // configuration / transform
  InvalidGamma,
  InvalidConfig,
  DomainError,
  EndpointViolation,
  MonotonicityViolation,
  InvalidScenario,
  ConflictingInputs,
  ParseError,
  // estimation
  DegenerateArm,
  RankDeficient,
  DegenerateResiduals,
  TooFewDistinct,
  KnotsNotAscending,
  ZeroDenominator,
  NonPositiveThreshold,
  ZeroVariance,
  TooManyDegenerateResamples,
  NullEcce,
  // io
  IoError,
};

enum class ErrorCategory { Validation, Estimation, Io };

constexpr std::string_view errc_name(Errc c) noexcept {
  switch (c) {
    case Errc::EmptyArm: return "EmptyArm";
    case Errc::InvalidArm: return "InvalidArm";
    case Errc::OutOfRangeEngagement: return "OutOfRangeEngagement";
    case Errc::ControlEngagement: return "ControlEngagement";
    case Errc::NonFiniteOutcome: return "NonFiniteOutcome";
    case Errc::ZeroInstrument: return "ZeroInstrument";
    case Errc::CovariateArity: return "CovariateArity";
    case Errc::MissingValue: return "MissingValue";
    case Errc::InvalidGamma: return "InvalidGamma";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::DomainError: return "DomainError";
    case Errc::EndpointViolation: return "EndpointViolation";
    case Errc::MonotonicityViolation: return "MonotonicityViolation";
    case Errc::InvalidScenario: return "InvalidScenario";
    case Errc::ConflictingInputs: return "ConflictingInputs";
    case Errc::ParseError: return "ParseError";
    case Errc::DegenerateArm: return "DegenerateArm";
    case Errc::RankDeficient: return "RankDeficient";
    case Errc::DegenerateResiduals: return "DegenerateResiduals";
    case Errc::TooFewDistinct: return "TooFewDistinct";
    case Errc::KnotsNotAscending: return "KnotsNotAscending";
    case Errc::ZeroDenominator: return "ZeroDenominator";
    case Errc::NonPositiveThreshold: return "NonPositiveThreshold";
    case Errc::ZeroVariance: return "ZeroVariance";
    case Errc::TooManyDegenerateResamples: return "TooManyDegenerateResamples";
    case Errc::NullEcce: return "NullEcce";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

constexpr ErrorCategory category_of(Errc c) noexcept {
  switch (c) {
    case Errc::EmptyArm:
    case Errc::InvalidArm:
    case Errc::OutOfRangeEngagement:
    case Errc::ControlEngagement:
    case Errc::NonFiniteOutcome:
    case Errc::ZeroInstrument:
    case Errc::CovariateArity:
    case Errc::MissingValue:
    case Errc::InvalidGamma:
    case Errc::InvalidConfig:
    case Errc::DomainError:
    case Errc::EndpointViolation:
    case Errc::MonotonicityViolation:
    case Errc::InvalidScenario:
    case Errc::ConflictingInputs:
    case Errc::ParseError:
      return ErrorCategory::Validation;
    case Errc::IoError:
      return ErrorCategory::Io;
    default:
      return ErrorCategory::Estimation;
  }
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code), message_(what) {}

  Errc code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& message() const noexcept { return message_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  Errc code_;
  std::string message_;
};

}  // namespace late_bounds
