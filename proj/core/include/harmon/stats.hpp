#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "harmon/cohort.hpp"
#include "harmon/gam.hpp"
#include "harmon/special.hpp"

namespace harmon::stats {

// Effect-size bins: small <= 0.1 < medium <= 0.25 < large.
inline constexpr double kSmallEffectMax = 0.10;
inline constexpr double kMediumEffectMax = 0.25;
// Cohen's conventional anchors, kept for report metadata.
inline constexpr double kCohenSmall = 0.10;
inline constexpr double kCohenMedium = 0.25;
inline constexpr double kCohenLarge = 0.40;

struct AnovaResult {
  std::string feature;
  double f_statistic = 0.0;
  int df_between = 0;
  int df_within = 0;
  double p_value = 1.0;
  double eta_squared = 0.0;
  double ss_between = 0.0;
  double ss_within = 0.0;
  bool zero_within_variance = false;  // F infinite, p reported as 0
  bool degenerate = false;            // no variance at all, F reported as 0
};

/// One-way ANOVA over integer group codes (any non-negative values).
AnovaResult anova_oneway(std::span<const double> values, std::span<const int> groups);
AnovaResult anova_oneway(std::span<const double> values, std::span<const std::string> groups);

enum class EffectBin { Small, Medium, Large };

std::string_view to_string(EffectBin bin) noexcept;
EffectBin effect_bin(double f) noexcept;

struct EffectSize {
  std::string feature;
  double f = 0.0;
  double eta_squared = 0.0;
  EffectBin bin = EffectBin::Small;
  bool infinite = false;  // zero within-group variance
};

EffectSize cohens_f(std::span<const double> values, std::span<const int> groups);
EffectSize cohens_f(std::span<const double> values, std::span<const std::string> groups);
// Shares the sums of squares already computed by anova_oneway.
EffectSize cohens_f(const AnovaResult& anova);

struct FdrResult {
  std::vector<double> adjusted;
  std::vector<bool> rejected;
};

/// Benjamini-Hochberg step-up; output in input order.
FdrResult bh_fdr(std::span<const double> p_values, double q);

enum class FamilyRuleKind { Prefix, Single, Map };

struct FamilyRule {
  FamilyRuleKind kind = FamilyRuleKind::Prefix;
  std::map<std::string, std::string> mapping;  // feature -> family, for Map

  // Prefix: text before the first '_' (the metric in "FA_bundle").
  std::string family_of(const std::string& feature) const;
  std::string describe() const;
};

std::string_view to_string(FamilyRuleKind kind) noexcept;
/// Two-column CSV (feature,family) with a header row.
FamilyRule read_family_file(const std::filesystem::path& path);

struct FeatureResult {
  AnovaResult anova;
  EffectSize effect;
  std::string family;
  double p_adjusted = 1.0;
  bool rejected = false;
};

struct FamilySummary {
  std::string family;
  std::size_t tests = 0;
  std::size_t rejections = 0;
  double median_f = 0.0;
};

struct BinCounts {
  std::size_t small = 0;
  std::size_t medium = 0;
  std::size_t large = 0;

  std::size_t total() const { return small + medium + large; }
  double percent(EffectBin bin) const;
};

struct EvaluationReport {
  std::vector<FeatureResult> features;
  std::vector<FamilySummary> families;  // sorted by family name
  BinCounts bins;
  std::size_t rejections = 0;
  std::size_t flagged = 0;  // degenerate or infinite-F features

  // metadata
  std::string family_rule;
  double q = 0.05;
  std::size_t n_subjects = 0;
  std::size_t n_sites = 0;
  bool residualized = false;
};

struct EvaluateOptions {
  double q = 0.05;
  FamilyRule families;
  // Regress out age (smooth) and sex/covariates before testing.
  bool residualize = false;
  gam::SmoothSpec spec;
  int threads = 0;
};

EvaluationReport evaluate_cohort(const CohortTable& cohort, const EvaluateOptions& options = {});

// "X of N significant after FDR" headline, per-family lines and bin shares.
std::string format_summary(const EvaluationReport& report);

std::string report_to_json(const EvaluationReport& report);
EvaluationReport report_from_json(std::string_view text);
std::string report_to_csv(const EvaluationReport& report);
void write_report(const EvaluationReport& report, const std::filesystem::path& json_path,
                  const std::filesystem::path& csv_path);
EvaluationReport read_report(const std::filesystem::path& json_path);

double median(std::vector<double> values);

}  // namespace harmon::stats
