#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace harmon::gam {

// Condition-number estimate above which a penalized system counts as singular.
inline constexpr double kMaxCondition = 1e12;

std::vector<double> log_lambda_grid(double lo, double hi, int count);

struct SmoothSpec {
  int degree = 3;
  int n_basis = 10;
  int penalty_order = 2;
  std::vector<double> lambda_grid = log_lambda_grid(1e-4, 1e4, 20);

  // Throws InvalidConfig when the invariants do not hold.
  void check() const;
  friend bool operator==(const SmoothSpec&, const SmoothSpec&) = default;
};

/// Cubic P-spline defaults with n_basis = min(10, distinct(x) - 1).
SmoothSpec default_smooth_spec(std::span<const double> x);

struct SmoothFit {
  SmoothSpec spec;
  std::vector<double> knots;  // clamped: degree+1 copies of each end
  Eigen::VectorXd coefficients;
  double lambda = 0.0;
  double edf = 0.0;

  double lower() const { return knots.front(); }
  double upper() const { return knots.back(); }
};

/// Clamped knot vector with interior knots at quantiles of the distinct x values.
std::vector<double> place_knots(std::span<const double> x, const SmoothSpec& spec);

/// B-spline design matrix at x for a given knot vector. x outside the knot
/// range is clamped to the boundary.
Eigen::MatrixXd basis_matrix(std::span<const double> x, std::span<const double> knots, int degree);

/// Places knots from x and evaluates the basis there (N x n_basis).
Eigen::MatrixXd build_basis(std::span<const double> x, const SmoothSpec& spec);

/// Order-k divided-difference operator over the normalized Greville abscissae
/// of the basis, scaled by k! so that it reduces to plain k-th differences on
/// uniform knots. Its null space holds the coefficient vectors of polynomials
/// of degree < k for k <= 2 (constants and straight lines in x).
Eigen::MatrixXd difference_penalty(std::span<const double> knots, int degree, int order);

/// Minimizes |y - Bc|^2 + lambda |D c|^2 at a fixed lambda.
SmoothFit fit_penalized(std::span<const double> x, std::span<const double> y, const SmoothSpec& spec,
                        double lambda);

struct LambdaScore {
  double lambda = 0.0;
  double rss = 0.0;
  double edf = 0.0;
  double gcv = 0.0;
};

/// GCV(lambda) = N * RSS / (N - edf)^2 for every grid value.
std::vector<LambdaScore> gcv_profile(std::span<const double> x, std::span<const double> y,
                                     const SmoothSpec& spec);

/// Fit at the grid lambda minimizing GCV; ties go to the larger lambda.
SmoothFit select_lambda_gcv(std::span<const double> x, std::span<const double> y,
                            const SmoothSpec& spec);

struct SmoothEvaluation {
  Eigen::VectorXd values;
  std::size_t clamped = 0;  // inputs that fell outside the training range
};

SmoothEvaluation evaluate_smooth(const SmoothFit& fit, std::span<const double> x_new);

/// y ~ X beta + f(x) where X is unpenalized and f is a penalized spline with
/// sum_i f(x_i) = 0 over the training rows.
struct AdditiveFit {
  Eigen::VectorXd linear;
  SmoothFit smooth;
  Eigen::VectorXd fitted;
  double edf_total = 0.0;
};

AdditiveFit fit_additive(std::span<const double> x, const Eigen::MatrixXd& fixed,
                         std::span<const double> y, const SmoothSpec& spec, double lambda);

/// Ordinary least squares with the same singularity guard as the penalized fits.
Eigen::VectorXd least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& y);

}  // namespace harmon::gam
