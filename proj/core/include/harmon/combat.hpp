#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "harmon/cohort.hpp"
#include "harmon/gam.hpp"

namespace harmon::combat {

inline constexpr double kMinResidualScale = 1e-12;
inline constexpr double kMinSiteVariance = 1e-12;
inline constexpr double kMinPriorVariance = 1e-12;

/// Which covariate terms enter the standardization fit. The intercept and the
/// site offsets are always present.
struct StandardizationOptions {
  bool use_smooth = true;
  bool use_sex = true;
  bool use_covariates = true;
  int threads = 0;  // 0: hardware concurrency
};

/// Covariate model Y = alpha + f(age) + beta_sex*sex + beta_extra*cov + u_site + e,
/// fitted per feature with sum_s (n_s/N) u_s = 0 so alpha is the population
/// grand mean of the site intercepts.
struct StandardizationModel {
  std::vector<std::string> feature_names;
  std::vector<std::string> covariate_names;
  std::vector<std::string> site_order;
  std::vector<double> site_weights;  // n_s / N at fit time
  StandardizationOptions options;

  Eigen::VectorXd alpha;                // F
  std::vector<gam::SmoothFit> age_smooth;  // F entries, empty when use_smooth is off
  Eigen::VectorXd beta_sex;             // F, zero when use_sex is off
  Eigen::MatrixXd beta_extra;           // C x F
  Eigen::VectorXd sigma;                // F, RMS residual of the full fit
  Eigen::MatrixXd site_offsets;         // S x F raw offsets u_sf

  std::size_t n_features() const { return feature_names.size(); }
  std::size_t n_sites() const { return site_order.size(); }
};

StandardizationModel fit_standardization(const CohortTable& cohort, const gam::SmoothSpec& spec,
                                         const StandardizationOptions& options = {});

struct CovariateSignal {
  Eigen::MatrixXd values;  // N x F: alpha + f(age) + beta terms
  std::size_t clamped_ages = 0;
};

CovariateSignal covariate_signal(const CohortTable& cohort, const StandardizationModel& model);

struct Standardized {
  Eigen::MatrixXd z;  // N x F, site effects still present
  std::size_t clamped_ages = 0;
};

Standardized standardize(const CohortTable& cohort, const StandardizationModel& model);

struct RawSiteParams {
  Eigen::MatrixXd gamma_hat;   // S x F, per-site mean of Z
  Eigen::MatrixXd delta2_hat;  // S x F, per-site sample variance of Z (n-1)
};

RawSiteParams estimate_site_params(const Eigen::MatrixXd& z, std::span<const int> site_index,
                                   std::size_t n_sites);

struct EBHyperparams {
  Eigen::VectorXd gamma_bar;   // prior mean per site
  Eigen::VectorXd tau2_bar;    // prior variance per site
  Eigen::VectorXd lambda_bar;  // inverse-gamma shape per site
  Eigen::VectorXd theta_bar;   // inverse-gamma scale per site
  std::vector<bool> available;
  std::vector<std::string> unavailable_reason;  // empty when available

  std::size_t n_sites() const { return available.size(); }
};

/// Moment-matched normal / inverse-gamma priors pooled across features. Sites
/// whose variance-of-variances collapses are marked unavailable rather than
/// thrown, so the caller can fall back to raw estimates for them only.
EBHyperparams estimate_eb_hyperparams(const Eigen::MatrixXd& gamma_hat,
                                      const Eigen::MatrixXd& delta2_hat);

struct EbOptions {
  double tol = 1e-6;
  int max_iter = 100;
};

struct EbResult {
  Eigen::MatrixXd gamma_star;
  Eigen::MatrixXd delta2_star;
  std::vector<int> iterations;   // per site, 0 when passed through
  std::vector<bool> converged;   // per site
  double max_change = 0.0;       // largest final change over sites
};

EbResult eb_shrink(const Eigen::MatrixXd& z, std::span<const int> site_index,
                   const Eigen::MatrixXd& gamma_hat, const Eigen::MatrixXd& delta2_hat,
                   const EBHyperparams& eb, const EbOptions& options = {});

struct SiteParams {
  Eigen::MatrixXd gamma_hat;
  Eigen::MatrixXd delta2_hat;
  Eigen::MatrixXd gamma_star;
  Eigen::MatrixXd delta2_star;
};

struct FitOptions {
  bool eb_enabled = true;
  StandardizationOptions standardization;
  EbOptions eb;
};

struct HarmonizationModel {
  StandardizationModel standardization;
  SiteParams site_params;
  EBHyperparams eb;
  gam::SmoothSpec spec;
  FitOptions options;
  std::string fingerprint;            // hash of spec + options
  std::vector<std::string> warnings;  // EB fallbacks, non-convergence
};

HarmonizationModel fit_combat_gam(const CohortTable& cohort, const gam::SmoothSpec& spec,
                                  const FitOptions& options = {});

struct HarmonizedCohort {
  CohortTable cohort;
  std::size_t clamped_ages = 0;
};

/// Removes gamma* and rescales by delta* in standardized units, then restores
/// the covariate signal. Sites unknown to the model are an error.
HarmonizedCohort apply_harmonization(const CohortTable& cohort, const HarmonizationModel& model);

std::string config_fingerprint(const gam::SmoothSpec& spec, const FitOptions& options);

// Model file: one JSON document, round-trips bit-exactly.
std::string serialize_model(const HarmonizationModel& model);
HarmonizationModel parse_model(std::string_view json_text);
void write_model(const HarmonizationModel& model, const std::filesystem::path& path);
HarmonizationModel read_model(const std::filesystem::path& path);

}  // namespace harmon::combat
