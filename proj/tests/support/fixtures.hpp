#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "harmon/cohort.hpp"
#include "harmon/error.hpp"

namespace fixture {

// Error code thrown by fn, or nullopt when it returns normally.
template <typename Fn>
std::optional<harmon::ErrorCode> error_code(Fn&& fn) {
  try {
    fn();
  } catch (const harmon::Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline std::vector<std::string> ids(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("s" + std::to_string(i));
  return out;
}

inline harmon::CohortTable cohort(std::vector<std::string> sites, std::vector<double> age, std::vector<int> sex,
                                  Eigen::MatrixXd features, std::vector<std::string> names = {}) {
  if (names.empty()) {
    for (Eigen::Index f = 0; f < features.cols(); ++f) names.push_back("FA_b" + std::to_string(f + 1));
  }
  const std::size_t n = sites.size();
  return harmon::CohortTable(ids(n), std::move(sites), std::move(age), std::move(sex), std::move(features),
                             std::move(names));
}

}  // namespace fixture
