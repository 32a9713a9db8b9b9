#include "harmon/combat.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>

#include <Eigen/Householder>
#include <Eigen/QR>

#include "harmon/error.hpp"
#include "harmon/parallel.hpp"

namespace harmon::combat {

namespace {

// Orthonormal basis of {u : w^T u = 0}, S x (S-1).
Eigen::MatrixXd weighted_contrasts(const std::vector<double>& weights) {
  const auto s = static_cast<Eigen::Index>(weights.size());
  const Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(weights.data(), s);
  const Eigen::MatrixXd w_col = w;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(w_col);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(s, s);
  return q.rightCols(s - 1);
}

void check_features_match(const CohortTable& cohort, const StandardizationModel& model) {
  if (cohort.feature_names() != model.feature_names) {
    throw Error(ErrorCode::DimensionMismatch, "cohort features do not match the model's features");
  }
  if (model.options.use_covariates && cohort.covariate_names() != model.covariate_names) {
    throw Error(ErrorCode::DimensionMismatch, "cohort covariates do not match the model's covariates");
  }
}

std::vector<std::size_t> site_counts(std::span<const int> site_index, std::size_t n_sites) {
  std::vector<std::size_t> counts(n_sites, 0);
  for (int s : site_index) ++counts[static_cast<std::size_t>(s)];
  return counts;
}

}  // namespace

StandardizationModel fit_standardization(const CohortTable& cohort, const gam::SmoothSpec& spec,
                                         const StandardizationOptions& options) {
  require_valid(cohort);
  StandardizationModel model;
  model.feature_names = cohort.feature_names();
  model.site_order = cohort.site_order();
  model.options = options;
  if (options.use_covariates) model.covariate_names = cohort.covariate_names();
  const std::size_t n_sites = model.site_order.size();
  if (n_sites < 2) {
    throw Error(ErrorCode::InvalidCohort, "harmonization needs at least 2 sites, found " +
                                              std::to_string(n_sites));
  }
  if (options.use_smooth) spec.check();

  const auto n = static_cast<Eigen::Index>(cohort.n_subjects());
  const auto n_feat = static_cast<Eigen::Index>(cohort.n_features());
  const auto site_index = cohort.site_index(model.site_order);
  const auto counts = site_counts(site_index, n_sites);
  for (std::size_t s = 0; s < n_sites; ++s) {
    model.site_weights.push_back(static_cast<double>(counts[s]) / static_cast<double>(n));
  }

  // Fixed design: intercept, sex, extra covariates, weighted site contrasts.
  const Eigen::MatrixXd contrasts = weighted_contrasts(model.site_weights);
  const Eigen::Index n_cov = options.use_covariates ? cohort.covariates().cols() : 0;
  const Eigen::Index sex_col = 1;
  const Eigen::Index cov_col = sex_col + (options.use_sex ? 1 : 0);
  const Eigen::Index site_col = cov_col + n_cov;
  const Eigen::Index p = site_col + contrasts.cols();
  Eigen::MatrixXd fixed = Eigen::MatrixXd::Zero(n, p);
  fixed.col(0).setOnes();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (options.use_sex) fixed(i, sex_col) = cohort.sex()[static_cast<std::size_t>(i)];
    if (n_cov > 0) fixed.block(i, cov_col, 1, n_cov) = cohort.covariates().row(i);
    fixed.block(i, site_col, 1, contrasts.cols()) =
        contrasts.row(site_index[static_cast<std::size_t>(i)]);
  }

  model.alpha.resize(n_feat);
  model.beta_sex = Eigen::VectorXd::Zero(n_feat);
  model.beta_extra = Eigen::MatrixXd::Zero(n_cov, n_feat);
  model.sigma.resize(n_feat);
  model.site_offsets.resize(static_cast<Eigen::Index>(n_sites), n_feat);
  if (options.use_smooth) model.age_smooth.resize(static_cast<std::size_t>(n_feat));

  // Only needed for the partial residuals that drive lambda selection.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> fixed_qr;
  if (options.use_smooth) fixed_qr.compute(fixed);

  const std::span<const double> age(cohort.age());
  parallel_for(static_cast<std::size_t>(n_feat), options.threads, [&](std::size_t fi) {
    const auto f = static_cast<Eigen::Index>(fi);
    const Eigen::VectorXd y = cohort.features().col(f);
    Eigen::VectorXd coef;
    Eigen::VectorXd fitted;
    if (options.use_smooth) {
      // Choose lambda on the signal left after the linear terms, then refit jointly.
      const Eigen::VectorXd partial = y - fixed * fixed_qr.solve(y);
      const std::span<const double> partial_span(partial.data(), static_cast<std::size_t>(n));
      const double lambda = gam::select_lambda_gcv(age, partial_span, spec).lambda;
      auto joint = gam::fit_additive(age, fixed, std::span<const double>(y.data(), y.size()), spec, lambda);
      coef = std::move(joint.linear);
      fitted = std::move(joint.fitted);
      model.age_smooth[fi] = std::move(joint.smooth);
    } else {
      coef = gam::least_squares(fixed, y);
      fitted = fixed * coef;
    }
    model.alpha(f) = coef(0);
    if (options.use_sex) model.beta_sex(f) = coef(sex_col);
    if (n_cov > 0) model.beta_extra.col(f) = coef.segment(cov_col, n_cov);
    model.site_offsets.col(f) = contrasts * coef.segment(site_col, contrasts.cols());
    const double sigma = std::sqrt((y - fitted).squaredNorm() / static_cast<double>(n));
    if (!(sigma >= kMinResidualScale)) {
      throw Error(ErrorCode::ZeroResidualVariance,
                  "feature '" + model.feature_names[fi] +
                      "' is an exact function of the covariates and site (sigma = " +
                      std::to_string(sigma) + ")");
    }
    model.sigma(f) = sigma;
  });
  return model;
}

CovariateSignal covariate_signal(const CohortTable& cohort, const StandardizationModel& model) {
  check_features_match(cohort, model);
  const auto n = static_cast<Eigen::Index>(cohort.n_subjects());
  const auto n_feat = static_cast<Eigen::Index>(model.n_features());
  CovariateSignal out;
  out.values.resize(n, n_feat);
  const Eigen::VectorXd sex = Eigen::Map<const Eigen::VectorXi>(cohort.sex().data(), n).cast<double>();
  for (Eigen::Index f = 0; f < n_feat; ++f) {
    Eigen::VectorXd col = Eigen::VectorXd::Constant(n, model.alpha(f));
    if (model.options.use_smooth) {
      const auto eval = gam::evaluate_smooth(model.age_smooth[static_cast<std::size_t>(f)], cohort.age());
      col += eval.values;
      out.clamped_ages = std::max(out.clamped_ages, eval.clamped);
    }
    if (model.options.use_sex) col += model.beta_sex(f) * sex;
    if (model.beta_extra.rows() > 0) col += cohort.covariates() * model.beta_extra.col(f);
    out.values.col(f) = col;
  }
  return out;
}

Standardized standardize(const CohortTable& cohort, const StandardizationModel& model) {
  auto signal = covariate_signal(cohort, model);
  Standardized out;
  out.clamped_ages = signal.clamped_ages;
  out.z = (cohort.features() - signal.values).array().rowwise() / model.sigma.transpose().array();
  return out;
}

RawSiteParams estimate_site_params(const Eigen::MatrixXd& z, std::span<const int> site_index,
                                   std::size_t n_sites) {
  if (static_cast<std::size_t>(z.rows()) != site_index.size()) {
    throw Error(ErrorCode::DimensionMismatch, "Z rows and site labels differ in length");
  }
  const auto counts = site_counts(site_index, n_sites);
  for (std::size_t s = 0; s < n_sites; ++s) {
    if (counts[s] < kMinSiteSize) {
      throw Error(ErrorCode::SiteTooSmall, "site " + std::to_string(s) + " has " +
                                               std::to_string(counts[s]) + " rows");
    }
  }
  const auto s_count = static_cast<Eigen::Index>(n_sites);
  RawSiteParams out;
  out.gamma_hat = Eigen::MatrixXd::Zero(s_count, z.cols());
  out.delta2_hat = Eigen::MatrixXd::Zero(s_count, z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) out.gamma_hat.row(site_index[i]) += z.row(i);
  for (Eigen::Index s = 0; s < s_count; ++s) out.gamma_hat.row(s) /= static_cast<double>(counts[s]);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int s = site_index[i];
    out.delta2_hat.row(s) += (z.row(i) - out.gamma_hat.row(s)).array().square().matrix();
  }
  for (Eigen::Index s = 0; s < s_count; ++s) {
    out.delta2_hat.row(s) /= static_cast<double>(counts[s] - 1);
    for (Eigen::Index f = 0; f < z.cols(); ++f) {
      if (!(out.delta2_hat(s, f) >= kMinSiteVariance)) {
        throw Error(ErrorCode::DegenerateVariance, "site " + std::to_string(s) + ", feature " +
                                                       std::to_string(f) + ": variance " +
                                                       std::to_string(out.delta2_hat(s, f)));
      }
    }
  }
  return out;
}

EBHyperparams estimate_eb_hyperparams(const Eigen::MatrixXd& gamma_hat,
                                      const Eigen::MatrixXd& delta2_hat) {
  if (gamma_hat.rows() != delta2_hat.rows() || gamma_hat.cols() != delta2_hat.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "gamma and delta tables differ in shape");
  }
  const Eigen::Index n_sites = gamma_hat.rows();
  const Eigen::Index n_feat = gamma_hat.cols();
  if (n_feat < 2) throw Error(ErrorCode::InvalidConfig, "empirical Bayes needs at least 2 features");
  const double df = static_cast<double>(n_feat - 1);

  EBHyperparams eb;
  eb.gamma_bar.resize(n_sites);
  eb.tau2_bar.resize(n_sites);
  eb.lambda_bar = Eigen::VectorXd::Zero(n_sites);
  eb.theta_bar = Eigen::VectorXd::Zero(n_sites);
  eb.available.assign(static_cast<std::size_t>(n_sites), true);
  eb.unavailable_reason.assign(static_cast<std::size_t>(n_sites), {});
  for (Eigen::Index s = 0; s < n_sites; ++s) {
    const auto g = gamma_hat.row(s).array();
    eb.gamma_bar(s) = g.mean();
    eb.tau2_bar(s) = (g - eb.gamma_bar(s)).square().sum() / df;

    const auto d = delta2_hat.row(s).array();
    const double m = d.mean();
    const double v = (d - m).square().sum() / df;
    auto& reason = eb.unavailable_reason[static_cast<std::size_t>(s)];
    if (!(v >= kMinPriorVariance)) {
      reason = "variance of delta^2 across features is " + std::to_string(v);
    } else {
      eb.lambda_bar(s) = (m * m + 2.0 * v) / v;
      eb.theta_bar(s) = (m * m * m + m * v) / v;
      if (!(eb.lambda_bar(s) > 1.0)) reason = "inverse-gamma shape " + std::to_string(eb.lambda_bar(s)) + " <= 1";
    }
    eb.available[static_cast<std::size_t>(s)] = reason.empty();
  }
  return eb;
}

EbResult eb_shrink(const Eigen::MatrixXd& z, std::span<const int> site_index,
                   const Eigen::MatrixXd& gamma_hat, const Eigen::MatrixXd& delta2_hat,
                   const EBHyperparams& eb, const EbOptions& options) {
  const Eigen::Index n_sites = gamma_hat.rows();
  const Eigen::Index n_feat = gamma_hat.cols();
  if (static_cast<std::size_t>(z.rows()) != site_index.size() || z.cols() != n_feat ||
      delta2_hat.rows() != n_sites || delta2_hat.cols() != n_feat ||
      eb.n_sites() != static_cast<std::size_t>(n_sites)) {
    throw Error(ErrorCode::DimensionMismatch, "eb_shrink inputs disagree in shape");
  }

  // sum_i (Z_i - g)^2 = ss_about_mean + n (mean - g)^2, so only per-site
  // moments of Z are needed inside the loop.
  Eigen::MatrixXd mean_z = Eigen::MatrixXd::Zero(n_sites, n_feat);
  Eigen::MatrixXd ss_z = Eigen::MatrixXd::Zero(n_sites, n_feat);
  const auto counts = site_counts(site_index, static_cast<std::size_t>(n_sites));
  for (Eigen::Index i = 0; i < z.rows(); ++i) mean_z.row(site_index[i]) += z.row(i);
  for (Eigen::Index s = 0; s < n_sites; ++s) {
    if (counts[s] > 0) mean_z.row(s) /= static_cast<double>(counts[s]);
  }
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int s = site_index[i];
    ss_z.row(s) += (z.row(i) - mean_z.row(s)).array().square().matrix();
  }

  EbResult out;
  out.gamma_star = gamma_hat;
  out.delta2_star = delta2_hat;
  out.iterations.assign(static_cast<std::size_t>(n_sites), 0);
  out.converged.assign(static_cast<std::size_t>(n_sites), true);

  for (Eigen::Index s = 0; s < n_sites; ++s) {
    const auto su = static_cast<std::size_t>(s);
    if (!eb.available[su]) continue;
    const double n_s = static_cast<double>(counts[su]);
    const double tau2 = eb.tau2_bar(s);
    const double gbar = eb.gamma_bar(s);
    const double shape = eb.lambda_bar(s);
    const double scale = eb.theta_bar(s);

    Eigen::ArrayXd g_old = gamma_hat.row(s).transpose().array();
    Eigen::ArrayXd d_old = delta2_hat.row(s).transpose().array();
    const Eigen::ArrayXd g_hat = g_old;
    const Eigen::ArrayXd m = mean_z.row(s).transpose().array();
    const Eigen::ArrayXd ss = ss_z.row(s).transpose().array();
    double change = 0.0;
    bool converged = false;
    int it = 0;
    while (it < options.max_iter) {
      ++it;
      const Eigen::ArrayXd g_new = (n_s * tau2 * g_hat + d_old * gbar) / (n_s * tau2 + d_old);
      const Eigen::ArrayXd sum2 = ss + n_s * (m - g_new).square();
      const Eigen::ArrayXd d_new = (scale + 0.5 * sum2) / (n_s / 2.0 + shape - 1.0);
      change = std::max((g_new - g_old).abs().maxCoeff(), (d_new - d_old).abs().maxCoeff());
      g_old = g_new;
      d_old = d_new;
      if (change < options.tol) {
        converged = true;
        break;
      }
    }
    out.gamma_star.row(s) = g_old.matrix().transpose();
    out.delta2_star.row(s) = d_old.matrix().transpose();
    out.iterations[su] = it;
    out.converged[su] = converged;
    out.max_change = std::max(out.max_change, change);
  }
  return out;
}

std::string config_fingerprint(const gam::SmoothSpec& spec, const FitOptions& options) {
  std::string canon = "degree=" + std::to_string(spec.degree) + ";n_basis=" +
                      std::to_string(spec.n_basis) + ";penalty_order=" +
                      std::to_string(spec.penalty_order) + ";lambda=";
  for (double l : spec.lambda_grid) canon += format_double(l) + ",";
  canon += ";eb=" + std::to_string(options.eb_enabled) + ";tol=" + format_double(options.eb.tol) +
           ";max_iter=" + std::to_string(options.eb.max_iter) +
           ";smooth=" + std::to_string(options.standardization.use_smooth) +
           ";sex=" + std::to_string(options.standardization.use_sex) +
           ";covariates=" + std::to_string(options.standardization.use_covariates);
  // FNV-1a, 64 bit.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : canon) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

HarmonizationModel fit_combat_gam(const CohortTable& cohort, const gam::SmoothSpec& spec,
                                  const FitOptions& options) {
  if (options.eb_enabled && cohort.n_features() < 2) {
    throw Error(ErrorCode::InvalidConfig, "empirical Bayes needs at least 2 features");
  }
  HarmonizationModel model;
  model.spec = spec;
  model.options = options;
  model.fingerprint = config_fingerprint(spec, options);
  model.standardization = fit_standardization(cohort, spec, options.standardization);

  const auto& order = model.standardization.site_order;
  const auto site_index = cohort.site_index(order);
  const auto z = standardize(cohort, model.standardization).z;
  auto raw = estimate_site_params(z, site_index, order.size());
  model.site_params.gamma_hat = raw.gamma_hat;
  model.site_params.delta2_hat = raw.delta2_hat;

  if (options.eb_enabled) {
    model.eb = estimate_eb_hyperparams(raw.gamma_hat, raw.delta2_hat);
    for (std::size_t s = 0; s < order.size(); ++s) {
      if (!model.eb.available[s]) {
        model.warnings.push_back("EB unavailable for site '" + order[s] + "' (" +
                                 model.eb.unavailable_reason[s] + "); using raw estimates");
      }
    }
    auto shrunk = eb_shrink(z, site_index, raw.gamma_hat, raw.delta2_hat, model.eb, options.eb);
    for (std::size_t s = 0; s < order.size(); ++s) {
      if (!shrunk.converged[s]) {
        model.warnings.push_back("EB did not converge for site '" + order[s] + "' after " +
                                 std::to_string(shrunk.iterations[s]) + " iterations (change " +
                                 format_double(shrunk.max_change) + ")");
      }
    }
    model.site_params.gamma_star = std::move(shrunk.gamma_star);
    model.site_params.delta2_star = std::move(shrunk.delta2_star);
  } else {
    const auto s_count = static_cast<Eigen::Index>(order.size());
    model.eb.gamma_bar = Eigen::VectorXd::Zero(s_count);
    model.eb.tau2_bar = Eigen::VectorXd::Zero(s_count);
    model.eb.lambda_bar = Eigen::VectorXd::Zero(s_count);
    model.eb.theta_bar = Eigen::VectorXd::Zero(s_count);
    model.eb.available.assign(order.size(), false);
    model.eb.unavailable_reason.assign(order.size(), "disabled");
    model.site_params.gamma_star = std::move(raw.gamma_hat);
    model.site_params.delta2_star = std::move(raw.delta2_hat);
  }
  return model;
}

HarmonizedCohort apply_harmonization(const CohortTable& cohort, const HarmonizationModel& model) {
  const auto& std_model = model.standardization;
  const auto site_index = cohort.site_index(std_model.site_order);
  auto signal = covariate_signal(cohort, std_model);
  const Eigen::MatrixXd& y = cohort.features();
  const Eigen::MatrixXd& gamma = model.site_params.gamma_star;
  const Eigen::MatrixXd delta = model.site_params.delta2_star.array().sqrt().matrix();

  Eigen::MatrixXd adjusted(y.rows(), y.cols());
  for (Eigen::Index f = 0; f < y.cols(); ++f) {
    const double sigma = std_model.sigma(f);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const int s = site_index[static_cast<std::size_t>(i)];
      const double z = (y(i, f) - signal.values(i, f)) / sigma;
      adjusted(i, f) = sigma * (z - gamma(s, f)) / delta(s, f) + signal.values(i, f);
    }
  }
  return {cohort.with_features(std::move(adjusted)), signal.clamped_ages};
}

}  // namespace harmon::combat
