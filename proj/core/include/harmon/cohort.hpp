#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace harmon {

// Per-site variance needs n-1 >= 2 for a nondegenerate variance of variances.
inline constexpr std::size_t kMinSiteSize = 3;

/// Subjects x features table with the per-subject covariates the harmonization
/// model conditions on. Immutable once built; validation is a separate step so
/// that malformed tables can still be inspected.
class CohortTable {
 public:
  CohortTable() = default;
  CohortTable(std::vector<std::string> subject_ids, std::vector<std::string> site_labels,
              std::vector<double> age, std::vector<int> sex, Eigen::MatrixXd features,
              std::vector<std::string> feature_names, Eigen::MatrixXd covariates = {},
              std::vector<std::string> covariate_names = {});

  std::size_t n_subjects() const noexcept { return subject_ids_.size(); }
  std::size_t n_features() const noexcept { return feature_names_.size(); }
  std::size_t n_covariates() const noexcept { return covariate_names_.size(); }

  const std::vector<std::string>& subject_ids() const noexcept { return subject_ids_; }
  const std::vector<std::string>& site_labels() const noexcept { return site_labels_; }
  const std::vector<double>& age() const noexcept { return age_; }
  const std::vector<int>& sex() const noexcept { return sex_; }
  const Eigen::MatrixXd& features() const noexcept { return features_; }
  const std::vector<std::string>& feature_names() const noexcept { return feature_names_; }
  // Extra linear covariates beyond sex, N x C.
  const Eigen::MatrixXd& covariates() const noexcept { return covariates_; }
  const std::vector<std::string>& covariate_names() const noexcept { return covariate_names_; }

  // Sorted unique site labels; this is the canonical site order everywhere.
  std::vector<std::string> site_order() const;
  // Per-subject index into `order`; throws UnknownSite for labels not in it.
  std::vector<int> site_index(const std::vector<std::string>& order) const;

  CohortTable with_features(Eigen::MatrixXd features) const;
  CohortTable with_site_labels(std::vector<std::string> site_labels) const;
  CohortTable select_rows(std::span<const std::size_t> rows) const;
  CohortTable select_features(std::span<const std::size_t> columns) const;

  friend bool operator==(const CohortTable& a, const CohortTable& b);

 private:
  std::vector<std::string> subject_ids_;
  std::vector<std::string> site_labels_;
  std::vector<double> age_;
  std::vector<int> sex_;
  Eigen::MatrixXd features_;
  std::vector<std::string> feature_names_;
  Eigen::MatrixXd covariates_;
  std::vector<std::string> covariate_names_;
};

enum class ViolationKind {
  LengthMismatch,
  DuplicateSubjectId,
  DuplicateFeatureName,
  SiteTooSmall,
  NonFinite,
  NegativeAge,
  InvalidSex,
  ZeroVariance,
  Empty,
};

struct Violation {
  ViolationKind kind;
  std::string subject;    // site label, feature name or subject id the violation concerns
  std::ptrdiff_t index = -1;  // row or column index when meaningful

  std::string to_string() const;
  friend bool operator==(const Violation&, const Violation&) = default;
};

std::string_view to_string(ViolationKind kind) noexcept;

/// Checks every table invariant; an empty result means the table is usable.
std::vector<Violation> validate(const CohortTable& cohort);

/// Throws InvalidCohort listing all violations when validate() is non-empty.
void require_valid(const CohortTable& cohort);

struct AgeFilter {
  double min_age = 0.0;
  double max_age = 0.0;
};

/// Keeps subjects with min_age <= age <= max_age. Sites that lose all their
/// subjects disappear; sites left with 1 or 2 subjects are an error.
CohortTable filter_age(const CohortTable& cohort, const AgeFilter& filter);

struct CsvSchema {
  std::string subject = "subject";
  std::string site = "site";
  std::string age = "age";
  std::string sex = "sex";
  // Extra numeric columns treated as linear covariates instead of features.
  std::vector<std::string> covariates;
};

CohortTable parse_cohort_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
CohortTable parse_cohort_csv_text(std::string_view text, const CsvSchema& schema = {});

// Column order: subject, site, age, sex, covariates, features. Floats use 17
// significant digits so parse(write(x)) == x bit for bit.
std::string write_cohort_csv_text(const CohortTable& cohort, const CsvSchema& schema = {});
void write_cohort_csv(const CohortTable& cohort, const std::filesystem::path& path,
                      const CsvSchema& schema = {});

// "%.17g" formatting shared by every text writer.
std::string format_double(double value);

}  // namespace harmon
