#include "harmon/gam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Householder>
#include <Eigen/QR>

#include "harmon/error.hpp"

namespace harmon::gam {

namespace {

std::vector<double> distinct_sorted(std::span<const double> x) {
  std::vector<double> u(x.begin(), x.end());
  std::sort(u.begin(), u.end());
  u.erase(std::unique(u.begin(), u.end()), u.end());
  return u;
}

double condition_estimate(const Eigen::ColPivHouseholderQR<Eigen::MatrixXd>& qr) {
  const auto& r = qr.matrixQR();
  const Eigen::Index n = std::min(r.rows(), r.cols());
  if (n == 0) return 1.0;
  const double first = std::abs(r(0, 0));
  const double last = std::abs(r(n - 1, n - 1));
  if (last == 0.0) return std::numeric_limits<double>::infinity();
  return first / last;
}

struct Solved {
  Eigen::VectorXd coef;
  double edf = 0.0;
};

// Least squares on the stacked system [top; penalty] c = [y; 0]. The hat matrix
// of the top block is Q_top Q_top^T, so its trace is |Q_top|_F^2.
Solved solve_stacked(const Eigen::MatrixXd& top, const Eigen::MatrixXd& penalty,
                     const Eigen::VectorXd& y) {
  const Eigen::Index n = top.rows();
  const Eigen::Index p = top.cols();
  Eigen::MatrixXd a(n + penalty.rows(), p);
  a.topRows(n) = top;
  if (penalty.rows() > 0) a.bottomRows(penalty.rows()) = penalty;
  Eigen::VectorXd b = Eigen::VectorXd::Zero(a.rows());
  b.head(n) = y;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  const double cond = condition_estimate(qr);
  if (!(cond <= kMaxCondition)) {
    throw Error(ErrorCode::SingularSystem,
                "penalized normal system is numerically singular (condition estimate " +
                    std::to_string(cond) + ")");
  }
  Solved out;
  out.coef = qr.solve(b);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.rows(), p);
  out.edf = q.topRows(n).squaredNorm();
  return out;
}

std::vector<double> greville(std::span<const double> knots, int degree, int n_basis) {
  std::vector<double> g(static_cast<std::size_t>(n_basis));
  for (int j = 0; j < n_basis; ++j) {
    double sum = 0.0;
    for (int k = 1; k <= degree; ++k) sum += knots[static_cast<std::size_t>(j + k)];
    g[static_cast<std::size_t>(j)] = sum / degree;
  }
  return g;
}

void check_lambda(double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorCode::InvalidConfig, "smoothing parameter must be positive and finite");
  }
}

}  // namespace

std::vector<double> log_lambda_grid(double lo, double hi, int count) {
  std::vector<double> grid;
  if (count <= 0) return grid;
  if (count == 1) return {lo};
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (int i = 0; i < count; ++i) grid.push_back(std::pow(10.0, a + (b - a) * i / (count - 1)));
  return grid;
}

void SmoothSpec::check() const {
  if (degree < 1) throw Error(ErrorCode::InvalidConfig, "spline degree must be >= 1");
  if (n_basis < degree + 1) {
    throw Error(ErrorCode::InvalidConfig, "n_basis must be >= degree + 1");
  }
  if (penalty_order < 1) throw Error(ErrorCode::InvalidConfig, "penalty order must be >= 1");
  if (penalty_order >= n_basis) {
    throw Error(ErrorCode::InvalidConfig, "penalty order must be < n_basis");
  }
  if (lambda_grid.empty()) throw Error(ErrorCode::InvalidConfig, "lambda grid is empty");
  for (std::size_t i = 0; i < lambda_grid.size(); ++i) {
    if (!(lambda_grid[i] > 0.0) || !std::isfinite(lambda_grid[i])) {
      throw Error(ErrorCode::InvalidConfig, "lambda grid values must be positive");
    }
    if (i > 0 && !(lambda_grid[i] > lambda_grid[i - 1])) {
      throw Error(ErrorCode::InvalidConfig, "lambda grid must be strictly increasing");
    }
  }
}

SmoothSpec default_smooth_spec(std::span<const double> x) {
  SmoothSpec spec;
  const auto distinct = static_cast<int>(distinct_sorted(x).size());
  spec.n_basis = std::max(spec.degree + 1, std::min(10, distinct - 1));
  return spec;
}

std::vector<double> place_knots(std::span<const double> x, const SmoothSpec& spec) {
  spec.check();
  const auto u = distinct_sorted(x);
  const int n_interior = spec.n_basis - spec.degree - 1;
  const auto need = static_cast<std::size_t>(n_interior + 2);
  if (u.size() < need) {
    throw Error(ErrorCode::TooFewDistinctValues,
                std::to_string(u.size()) + " distinct values, need at least " + std::to_string(need) +
                    " for " + std::to_string(spec.n_basis) + " basis functions of degree " +
                    std::to_string(spec.degree));
  }
  std::vector<double> knots;
  knots.reserve(static_cast<std::size_t>(spec.n_basis + spec.degree + 1));
  for (int i = 0; i <= spec.degree; ++i) knots.push_back(u.front());
  const double m1 = static_cast<double>(u.size() - 1);
  for (int k = 1; k <= n_interior; ++k) {
    const double h = m1 * k / (n_interior + 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const double frac = h - static_cast<double>(lo);
    const double q = lo + 1 < u.size() ? u[lo] + frac * (u[lo + 1] - u[lo]) : u[lo];
    knots.push_back(q);
  }
  for (int i = 0; i <= spec.degree; ++i) knots.push_back(u.back());
  return knots;
}

Eigen::MatrixXd basis_matrix(std::span<const double> x, std::span<const double> knots, int degree) {
  const int n_basis = static_cast<int>(knots.size()) - degree - 1;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(x.size()), n_basis);
  const double lo = knots.front();
  const double hi = knots.back();
  std::vector<double> left(static_cast<std::size_t>(degree + 1));
  std::vector<double> right(static_cast<std::size_t>(degree + 1));
  std::vector<double> values(static_cast<std::size_t>(degree + 1));

  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = std::clamp(x[i], lo, hi);
    // Span j with knots[j] <= xi < knots[j+1], restricted to [degree, n_basis-1].
    auto first = knots.begin() + degree;
    auto last = knots.begin() + n_basis;
    int j = static_cast<int>(std::upper_bound(first, last + 1, xi) - knots.begin()) - 1;
    j = std::clamp(j, degree, n_basis - 1);

    values[0] = 1.0;
    for (int r = 1; r <= degree; ++r) {
      left[static_cast<std::size_t>(r)] = xi - knots[static_cast<std::size_t>(j + 1 - r)];
      right[static_cast<std::size_t>(r)] = knots[static_cast<std::size_t>(j + r)] - xi;
      double saved = 0.0;
      for (int k = 0; k < r; ++k) {
        const double denom = right[static_cast<std::size_t>(k + 1)] + left[static_cast<std::size_t>(r - k)];
        const double temp = values[static_cast<std::size_t>(k)] / denom;
        values[static_cast<std::size_t>(k)] = saved + right[static_cast<std::size_t>(k + 1)] * temp;
        saved = left[static_cast<std::size_t>(r - k)] * temp;
      }
      values[static_cast<std::size_t>(r)] = saved;
    }
    for (int k = 0; k <= degree; ++k) {
      out(static_cast<Eigen::Index>(i), j - degree + k) = values[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

Eigen::MatrixXd build_basis(std::span<const double> x, const SmoothSpec& spec) {
  const auto knots = place_knots(x, spec);
  return basis_matrix(x, knots, spec.degree);
}

Eigen::MatrixXd difference_penalty(std::span<const double> knots, int degree, int order) {
  const int n_basis = static_cast<int>(knots.size()) - degree - 1;
  auto g = greville(knots, degree, n_basis);
  // Rescale to unit mean spacing so lambda means the same thing for any age units.
  const double g0 = g.front();
  const double span = g.back() - g0;
  for (auto& v : g) v = (v - g0) / span * (n_basis - 1);

  Eigen::MatrixXd d = Eigen::MatrixXd::Identity(n_basis, n_basis);
  for (int r = 1; r <= order; ++r) {
    const Eigen::Index rows = d.rows() - 1;
    Eigen::MatrixXd next(rows, n_basis);
    for (Eigen::Index j = 0; j < rows; ++j) {
      const double h = g[static_cast<std::size_t>(j + r)] - g[static_cast<std::size_t>(j)];
      next.row(j) = (d.row(j + 1) - d.row(j)) * (r / h);
    }
    d = std::move(next);
  }
  return d;
}

SmoothFit fit_penalized(std::span<const double> x, std::span<const double> y, const SmoothSpec& spec,
                        double lambda) {
  check_lambda(lambda);
  if (x.size() != y.size()) throw Error(ErrorCode::DimensionMismatch, "x and y lengths differ");
  SmoothFit fit;
  fit.spec = spec;
  fit.knots = place_knots(x, spec);
  fit.lambda = lambda;
  const Eigen::MatrixXd basis = basis_matrix(x, fit.knots, spec.degree);
  const Eigen::MatrixXd penalty =
      std::sqrt(lambda) * difference_penalty(fit.knots, spec.degree, spec.penalty_order);
  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  auto solved = solve_stacked(basis, penalty, yv);
  fit.coefficients = std::move(solved.coef);
  fit.edf = solved.edf;
  return fit;
}

std::vector<LambdaScore> gcv_profile(std::span<const double> x, std::span<const double> y,
                                     const SmoothSpec& spec) {
  if (x.size() != y.size()) throw Error(ErrorCode::DimensionMismatch, "x and y lengths differ");
  const auto knots = place_knots(x, spec);
  const Eigen::MatrixXd basis = basis_matrix(x, knots, spec.degree);
  const Eigen::MatrixXd diff = difference_penalty(knots, spec.degree, spec.penalty_order);
  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  const double n = static_cast<double>(y.size());

  std::vector<LambdaScore> out;
  out.reserve(spec.lambda_grid.size());
  for (double lambda : spec.lambda_grid) {
    const auto solved = solve_stacked(basis, std::sqrt(lambda) * diff, yv);
    LambdaScore score;
    score.lambda = lambda;
    score.rss = (yv - basis * solved.coef).squaredNorm();
    score.edf = solved.edf;
    const double dof = n - score.edf;
    score.gcv = dof > 0.0 ? n * score.rss / (dof * dof) : std::numeric_limits<double>::infinity();
    out.push_back(score);
  }
  return out;
}

SmoothFit select_lambda_gcv(std::span<const double> x, std::span<const double> y,
                            const SmoothSpec& spec) {
  spec.check();
  const auto profile = gcv_profile(x, y, spec);
  std::size_t best = 0;
  for (std::size_t i = 1; i < profile.size(); ++i) {
    if (profile[i].gcv <= profile[best].gcv) best = i;
  }
  return fit_penalized(x, y, spec, profile[best].lambda);
}

SmoothEvaluation evaluate_smooth(const SmoothFit& fit, std::span<const double> x_new) {
  SmoothEvaluation out;
  for (double v : x_new) {
    if (v < fit.lower() || v > fit.upper()) ++out.clamped;
  }
  out.values = basis_matrix(x_new, fit.knots, fit.spec.degree) * fit.coefficients;
  return out;
}

AdditiveFit fit_additive(std::span<const double> x, const Eigen::MatrixXd& fixed,
                         std::span<const double> y, const SmoothSpec& spec, double lambda) {
  check_lambda(lambda);
  if (x.size() != y.size() || static_cast<std::size_t>(fixed.rows()) != y.size()) {
    throw Error(ErrorCode::DimensionMismatch, "additive model inputs have different lengths");
  }
  AdditiveFit out;
  out.smooth.spec = spec;
  out.smooth.knots = place_knots(x, spec);
  out.smooth.lambda = lambda;
  const Eigen::MatrixXd basis = basis_matrix(x, out.smooth.knots, spec.degree);
  const Eigen::MatrixXd diff = difference_penalty(out.smooth.knots, spec.degree, spec.penalty_order);

  // Sum-to-zero over training rows: reparametrize c = Z w with Z spanning the
  // orthogonal complement of B^T 1.
  const Eigen::VectorXd col_sums = basis.colwise().sum().transpose();
  Eigen::HouseholderQR<Eigen::MatrixXd> hqr(col_sums);
  const Eigen::MatrixXd full_q = hqr.householderQ() * Eigen::MatrixXd::Identity(basis.cols(), basis.cols());
  const Eigen::MatrixXd z = full_q.rightCols(basis.cols() - 1);

  const Eigen::Index p = fixed.cols();
  const Eigen::Index k = z.cols();
  Eigen::MatrixXd top(fixed.rows(), p + k);
  top.leftCols(p) = fixed;
  top.rightCols(k) = basis * z;
  Eigen::MatrixXd penalty = Eigen::MatrixXd::Zero(diff.rows(), p + k);
  penalty.rightCols(k) = std::sqrt(lambda) * diff * z;

  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  const auto solved = solve_stacked(top, penalty, yv);
  out.linear = solved.coef.head(p);
  out.smooth.coefficients = z * solved.coef.tail(k);
  out.fitted = top * solved.coef;
  out.edf_total = solved.edf;
  // Count the absorbed intercept so edf is comparable to an unconstrained smooth.
  out.smooth.edf = solved.edf - static_cast<double>(p) + 1.0;
  return out;
}

Eigen::VectorXd least_squares(const Eigen::MatrixXd& design, const Eigen::VectorXd& y) {
  return solve_stacked(design, Eigen::MatrixXd(0, design.cols()), y).coef;
}

}  // namespace harmon::gam
