#include "harmon/error.hpp"

namespace harmon {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::NonNumericCell: return "NonNumericCell";
    case ErrorCode::DuplicateSubjectId: return "DuplicateSubjectId";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::InvalidValue: return "InvalidValue";
    case ErrorCode::EmptyResult: return "EmptyResult";
    case ErrorCode::SiteTooSmall: return "SiteTooSmall";
    case ErrorCode::InvalidCohort: return "InvalidCohort";
    case ErrorCode::TooFewDistinctValues: return "TooFewDistinctValues";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::ZeroResidualVariance: return "ZeroResidualVariance";
    case ErrorCode::DegenerateVariance: return "DegenerateVariance";
    case ErrorCode::UnknownSite: return "UnknownSite";
    case ErrorCode::DegenerateGroups: return "DegenerateGroups";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

}  // namespace harmon
