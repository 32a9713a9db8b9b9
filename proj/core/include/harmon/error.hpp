#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace harmon {

enum class ErrorCode {
  MissingColumn,
  NonNumericCell,
  DuplicateSubjectId,
  NonFiniteValue,
  InvalidValue,
  EmptyResult,
  SiteTooSmall,
  InvalidCohort,
  TooFewDistinctValues,
  SingularSystem,
  ZeroResidualVariance,
  DegenerateVariance,
  UnknownSite,
  DegenerateGroups,
  InvalidConfig,
  DimensionMismatch,
  ParseError,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace harmon
