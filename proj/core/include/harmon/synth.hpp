#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "harmon/cohort.hpp"
#include "harmon/combat.hpp"

namespace harmon::synth {

enum class Trajectory {
  SaturatingExp,  // A * (1 - exp(-(age - age_min) / tau))
  Quadratic,      // A * ((age - age_min) / (age_max - age_min))^2
};

std::string_view to_string(Trajectory t) noexcept;
Trajectory parse_trajectory(std::string_view name);

/// Generator settings. Feature units are multiples of noise_sd; the defaults
/// give a paper-sized cohort (437 infants, 6 scanner models, 4 x 67 features).
struct SynthConfig {
  int n_sites = 6;
  int total_subjects = 437;
  std::vector<int> subjects_per_site;  // overrides total_subjects when non-empty
  std::vector<std::string> metrics = {"AD", "FA", "LI", "RD"};
  int n_bundles = 67;

  double age_min = 0.0;
  double age_max = 0.2;
  Trajectory trajectory = Trajectory::SaturatingExp;
  double alpha_min = 0.5;
  double alpha_max = 2.0;
  double amplitude_min = 1.0;  // |A|; the sign is a per-feature coin flip
  double amplitude_max = 2.0;
  double tau_min = 0.03;
  double tau_max = 0.10;
  double beta_sex_min = 0.3;
  double beta_sex_max = 0.6;

  double gamma_sd = 0.5;
  double delta_shape = 15.0;  // inverse-gamma law of delta^2, mean scale/(shape-1)
  double delta_scale = 14.0;
  bool delta_fixed = false;   // delta^2 == 1 exactly
  double noise_sd = 1.0;
  std::uint64_t seed = 42;

  // Throws InvalidConfig.
  void check() const;
  std::vector<int> site_sizes() const;
  std::vector<std::string> site_labels() const;
  std::vector<std::string> feature_names() const;
  int n_features() const { return static_cast<int>(metrics.size()) * n_bundles; }
};

struct SynthGroundTruth {
  std::uint64_t seed = 0;
  Trajectory trajectory = Trajectory::SaturatingExp;
  double age_min = 0.0;
  double age_max = 0.0;
  std::vector<std::string> feature_names;
  std::vector<std::string> site_order;
  Eigen::VectorXd alpha;
  Eigen::VectorXd amplitude;  // signed
  Eigen::VectorXd tau;
  Eigen::VectorXd beta_sex;
  Eigen::VectorXd noise_sd;
  Eigen::MatrixXd gamma;   // S x F
  Eigen::MatrixXd delta2;  // S x F

  double age_effect(Eigen::Index feature, double age) const;
};

/// Draws a cohort from Y = alpha + f(age) + beta*sex + gamma + delta*noise*eps.
/// One mt19937_64 stream, drawn in a fixed order: subject covariates, feature
/// parameters, gamma table, delta table, then eps subject-major.
std::pair<CohortTable, SynthGroundTruth> generate_cohort(const SynthConfig& config);

struct RecoveryMetrics {
  double corr_gamma_hat = 0.0;
  double rmse_gamma_hat = 0.0;
  double corr_gamma_star = 0.0;
  double rmse_gamma_star = 0.0;
  double corr_delta2_hat = 0.0;
  double rmse_delta2_hat = 0.0;
  double corr_delta2_star = 0.0;
  double rmse_delta2_star = 0.0;
  double rmse_beta_sex = 0.0;
  double max_abs_error_beta_sex = 0.0;
};

/// Compares fitted site parameters with the truth mapped onto the model's
/// identifiable scale: gamma centred with the fit's site weights and divided
/// by sigma_f; delta^2 times noise_sd^2 / sigma_f^2.
RecoveryMetrics score_recovery(const SynthGroundTruth& truth, const combat::HarmonizationModel& model);

double pearson(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b);

std::string truth_to_json(const SynthGroundTruth& truth);
SynthGroundTruth truth_from_json(std::string_view text);
void write_truth(const SynthGroundTruth& truth, const std::filesystem::path& path);

/// mt19937_64 with explicit uniform/normal/gamma transforms so draw order and
/// values are fixed by this code rather than by the standard library vendor.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  double uniform();                    // [0, 1), 53-bit
  double uniform(double lo, double hi);
  double normal();                     // Box-Muller, cosine branch
  double gamma(double shape);          // Marsaglia-Tsang, unit scale
  bool coin() { return uniform() < 0.5; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace harmon::synth
