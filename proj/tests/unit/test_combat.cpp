#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "harmon/combat.hpp"
#include "harmon/synth.hpp"

using namespace harmon;
using namespace harmon::combat;

namespace {

FitOptions intercept_only(bool eb = false) {
  FitOptions opt;
  opt.eb_enabled = eb;
  opt.standardization.use_smooth = false;
  opt.standardization.use_sex = false;
  opt.standardization.use_covariates = false;
  return opt;
}

// Sites with different location and scale, no covariate signal.
CohortTable shifted_sites(std::uint64_t seed, std::vector<int> sizes, std::vector<double> shift,
                          std::vector<double> scale, int n_feat) {
  oracle::TestRng rng(seed);
  std::vector<std::string> sites;
  std::vector<double> age;
  std::vector<int> sex;
  int n = 0;
  for (int s : sizes) n += s;
  Eigen::MatrixXd y(n, n_feat);
  int row = 0;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    for (int i = 0; i < sizes[s]; ++i, ++row) {
      sites.push_back("site" + std::to_string(s));
      age.push_back(rng.uniform(0.0, 0.2));
      sex.push_back(rng.uniform(0.0, 1.0) < 0.5 ? 0 : 1);
      for (int f = 0; f < n_feat; ++f) y(row, f) = 1.0 + 0.1 * f + shift[s] * (1 + f % 3) + scale[s] * rng.normal();
    }
  }
  return fixture::cohort(sites, age, sex, y);
}

synth::SynthConfig small_synth(std::uint64_t seed) {
  synth::SynthConfig cfg;
  cfg.n_bundles = 8;
  cfg.total_subjects = 240;
  cfg.seed = seed;
  return cfg;
}

double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("intercept-only standardization") {
  const auto c = shifted_sites(1, {30, 50, 20}, {0.0, 1.0, -2.0}, {1.0, 2.0, 0.5}, 3);
  const auto m = fit_standardization(c, gam::default_smooth_spec(c.age()), intercept_only().standardization);
  const auto idx = c.site_index(m.site_order);
  for (Eigen::Index f = 0; f < 3; ++f) {
    CHECK(m.alpha(f) == doctest::Approx(c.features().col(f).mean()).epsilon(1e-12));
    double weighted = 0.0;
    for (std::size_t s = 0; s < 3; ++s) weighted += m.site_weights[s] * m.site_offsets(static_cast<Eigen::Index>(s), f);
    CHECK(std::abs(weighted) < 1e-10);
    // sigma is the RMS of the within-site residuals, denominator N
    std::vector<double> sum(3, 0.0), cnt(3, 0.0);
    for (Eigen::Index i = 0; i < c.features().rows(); ++i) {
      sum[idx[i]] += c.features()(i, f);
      cnt[idx[i]] += 1.0;
    }
    double ss = 0.0;
    for (Eigen::Index i = 0; i < c.features().rows(); ++i) {
      const double r = c.features()(i, f) - sum[idx[i]] / cnt[idx[i]];
      ss += r * r;
    }
    CHECK(m.sigma(f) == doctest::Approx(std::sqrt(ss / 100.0)).epsilon(1e-12));
  }
}

TEST_CASE("site offsets sum to zero under the site weights with the full model") {
  const auto [c, truth] = synth::generate_cohort(small_synth(3));
  const auto m = fit_standardization(c, gam::default_smooth_spec(c.age()));
  for (Eigen::Index f = 0; f < m.site_offsets.cols(); ++f) {
    double weighted = 0.0;
    for (std::size_t s = 0; s < m.n_sites(); ++s) weighted += m.site_weights[s] * m.site_offsets(static_cast<Eigen::Index>(s), f);
    CHECK(std::abs(weighted) < 1e-10);
  }
}

TEST_CASE("pure noise: intercept near zero, sex effect recovered") {
  oracle::TestRng rng(4);
  const int n = 400;
  std::vector<std::string> sites;
  std::vector<double> age;
  std::vector<int> sex;
  Eigen::MatrixXd y(n, 2);
  for (int i = 0; i < n; ++i) {
    sites.push_back(i % 4 == 0 ? "a" : (i % 4 == 1 ? "b" : (i % 4 == 2 ? "c" : "d")));
    age.push_back(rng.uniform(0.0, 0.2));
    sex.push_back(rng.uniform(0.0, 1.0) < 0.5 ? 0 : 1);
    y(i, 0) = rng.normal();
    y(i, 1) = 0.3 * sex.back() + rng.normal();
  }
  const auto c = fixture::cohort(sites, age, sex, y);
  StandardizationOptions opt;
  opt.use_smooth = false;
  const auto m = fit_standardization(c, gam::default_smooth_spec(c.age()), opt);
  CHECK(std::abs(m.alpha(0)) < 3.0 * 2.0 / std::sqrt(n));
  CHECK(std::abs(m.beta_sex(0)) < 5.0 * 2.0 / std::sqrt(n));
  CHECK(std::abs(m.beta_sex(1) - 0.3) < 5.0 * 2.0 / std::sqrt(n));
}

TEST_CASE("standardize recovers the noise of a known signal") {
  const auto [c, truth] = synth::generate_cohort(small_synth(5));
  const auto m = fit_standardization(c, gam::default_smooth_spec(c.age()));
  const auto st = standardize(c, m);
  const auto sig = covariate_signal(c, m);
  // affine inverse
  const Eigen::MatrixXd back = (st.z.array().rowwise() * m.sigma.transpose().array()).matrix() + sig.values;
  CHECK(max_abs_diff(back, c.features()) < 1e-10);
  // mean of Z is the weighted mean of the per-site means, which is zero
  const auto idx = c.site_index(m.site_order);
  const auto raw = estimate_site_params(st.z, idx, m.n_sites());
  for (Eigen::Index f = 0; f < st.z.cols(); ++f) {
    double weighted = 0.0;
    for (std::size_t s = 0; s < m.n_sites(); ++s) weighted += m.site_weights[s] * raw.gamma_hat(static_cast<Eigen::Index>(s), f);
    CHECK(st.z.col(f).mean() == doctest::Approx(weighted).epsilon(1e-12).scale(1.0));
    CHECK(std::abs(weighted) < 1e-10);
    for (std::size_t s = 0; s < m.n_sites(); ++s) {
      CHECK(raw.gamma_hat(static_cast<Eigen::Index>(s), f) * m.sigma(f) ==
            doctest::Approx(m.site_offsets(static_cast<Eigen::Index>(s), f)).epsilon(1e-10).scale(1.0));
    }
  }
}

TEST_CASE("per-site parameters") {
  Eigen::MatrixXd z(6, 1);
  z << 0, 2, 4, 1, 1, 4;
  const std::vector<int> idx{0, 0, 0, 1, 1, 1};
  const auto raw = estimate_site_params(z, idx, 2);
  CHECK(raw.gamma_hat(0, 0) == 2.0);
  CHECK(raw.delta2_hat(0, 0) == 4.0);
  CHECK(raw.gamma_hat(1, 0) == 2.0);
  CHECK(raw.delta2_hat(1, 0) == 3.0);

  const Eigen::MatrixXd zeros = Eigen::MatrixXd::Zero(6, 2);
  CHECK(fixture::error_code([&] { estimate_site_params(zeros, idx, 2); }) == ErrorCode::DegenerateVariance);
  const std::vector<int> lonely{0, 0, 0, 0, 0, 1};
  CHECK(fixture::error_code([&] { estimate_site_params(z, lonely, 2); }) == ErrorCode::SiteTooSmall);
}

TEST_CASE("EB hyperparameters") {
  SUBCASE("equal variances leave the site unavailable") {
    Eigen::MatrixXd g(2, 4);
    g << 0.1, 0.2, 0.3, 0.4, -0.1, 0.0, 0.1, 0.2;
    Eigen::MatrixXd d = Eigen::MatrixXd::Ones(2, 4);
    d(1, 0) = 2.0;
    const auto eb = estimate_eb_hyperparams(g, d);
    CHECK_FALSE(eb.available[0]);
    CHECK_FALSE(eb.unavailable_reason[0].empty());
    CHECK(eb.available[1]);
    CHECK(eb.gamma_bar(0) == doctest::Approx(0.25));
    CHECK(eb.tau2_bar(0) == doctest::Approx(0.05 / 3.0));
  }
  SUBCASE("moment matching recovers an inverse-gamma law") {
    // 1 / Gamma(shape 5, rate 4) has mean 1 and variance 1/3
    std::mt19937_64 engine(6);
    std::gamma_distribution<double> gamma(5.0, 1.0 / 4.0);
    const int n_feat = 10000;
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(1, n_feat);
    Eigen::MatrixXd d(1, n_feat);
    for (int f = 0; f < n_feat; ++f) {
      g(0, f) = 0.01 * f;
      d(0, f) = 1.0 / gamma(engine);
    }
    const auto eb = estimate_eb_hyperparams(g, d);
    REQUIRE(eb.available[0]);
    CHECK(std::abs(eb.lambda_bar(0) / 5.0 - 1.0) < 0.1);
    CHECK(std::abs(eb.theta_bar(0) / 4.0 - 1.0) < 0.1);
  }
  SUBCASE("fewer than two features") {
    CHECK(fixture::error_code([] { estimate_eb_hyperparams(Eigen::MatrixXd::Ones(2, 1), Eigen::MatrixXd::Ones(2, 1)); }) ==
          ErrorCode::InvalidConfig);
  }
}

TEST_CASE("EB shrinkage limits") {
  oracle::TestRng rng(7);
  const int per_site = 10, n_feat = 6;
  Eigen::MatrixXd z(2 * per_site, n_feat);
  std::vector<int> idx;
  for (int i = 0; i < 2 * per_site; ++i) {
    idx.push_back(i < per_site ? 0 : 1);
    for (int f = 0; f < n_feat; ++f) z(i, f) = (i < per_site ? 0.5 : -0.5) + (1.0 + 0.2 * f) * rng.normal();
  }
  const auto raw = estimate_site_params(z, idx, 2);
  auto eb = estimate_eb_hyperparams(raw.gamma_hat, raw.delta2_hat);
  REQUIRE(eb.available[0]);
  REQUIRE(eb.available[1]);

  SUBCASE("zero prior variance pins gamma to its prior mean") {
    eb.tau2_bar.setZero();
    const auto r = eb_shrink(z, idx, raw.gamma_hat, raw.delta2_hat, eb);
    for (int s = 0; s < 2; ++s) {
      for (int f = 0; f < n_feat; ++f) CHECK(r.gamma_star(s, f) == doctest::Approx(eb.gamma_bar(s)).epsilon(1e-15));
      CHECK(r.converged[static_cast<std::size_t>(s)]);
      CHECK(r.iterations[static_cast<std::size_t>(s)] <= 2);
    }
  }
  SUBCASE("huge prior variance leaves gamma at the raw estimate") {
    eb.tau2_bar.setConstant(1e9);
    const auto r = eb_shrink(z, idx, raw.gamma_hat, raw.delta2_hat, eb);
    CHECK(max_abs_diff(r.gamma_star, raw.gamma_hat) < 1e-8);
  }
  SUBCASE("estimates contract toward the prior mean") {
    const auto r = eb_shrink(z, idx, raw.gamma_hat, raw.delta2_hat, eb);
    for (int s = 0; s < 2; ++s) {
      for (int f = 0; f < n_feat; ++f) {
        CHECK(std::abs(r.gamma_star(s, f) - eb.gamma_bar(s)) <= std::abs(raw.gamma_hat(s, f) - eb.gamma_bar(s)) + 1e-15);
      }
    }
  }
  SUBCASE("unavailable sites pass through") {
    eb.available[1] = false;
    const auto r = eb_shrink(z, idx, raw.gamma_hat, raw.delta2_hat, eb);
    CHECK(r.gamma_star.row(1) == raw.gamma_hat.row(1));
    CHECK(r.delta2_star.row(1) == raw.delta2_hat.row(1));
    CHECK(r.iterations[1] == 0);
  }
}

TEST_CASE("EB fixed point agrees with a damped multi-start iteration") {
  oracle::TestRng rng(8);
  const int per_site = 5, n_feat = 3;
  Eigen::MatrixXd z(2 * per_site, n_feat);
  std::vector<int> idx;
  for (int i = 0; i < 2 * per_site; ++i) {
    idx.push_back(i / per_site);
    for (int f = 0; f < n_feat; ++f) z(i, f) = (i < per_site ? 0.8 : -0.3) + (0.5 + f) * rng.normal();
  }
  const auto raw = estimate_site_params(z, idx, 2);
  const auto eb = estimate_eb_hyperparams(raw.gamma_hat, raw.delta2_hat);
  REQUIRE(eb.available[0]);
  REQUIRE(eb.available[1]);
  EbOptions tight;
  tight.tol = 1e-15;
  tight.max_iter = 100000;
  const auto r = eb_shrink(z, idx, raw.gamma_hat, raw.delta2_hat, eb, tight);
  for (int s = 0; s < 2; ++s) {
    for (int f = 0; f < n_feat; ++f) {
      std::vector<double> zs;
      for (int i = 0; i < 2 * per_site; ++i) {
        if (idx[i] == s) zs.push_back(z(i, f));
      }
      const oracle::EbPoint starts[] = {{raw.gamma_hat(s, f), raw.delta2_hat(s, f)}, {0.0, 1.0}, {eb.gamma_bar(s), 10.0}};
      for (const auto& start : starts) {
        const auto o = oracle::eb_damped(zs, eb.gamma_bar(s), eb.tau2_bar(s), eb.lambda_bar(s), eb.theta_bar(s), start, 0.5);
        CHECK(std::abs(o.gamma - r.gamma_star(s, f)) < 1e-8);
        CHECK(std::abs(o.delta2 - r.delta2_star(s, f)) < 1e-8);
      }
    }
  }
}

TEST_CASE("no-covariate two-site harmonization matches the location-scale closed form") {
  const auto c = shifted_sites(9, {12, 17}, {0.0, 3.0}, {1.0, 2.5}, 2);
  const auto model = fit_combat_gam(c, gam::default_smooth_spec(c.age()), intercept_only());
  const auto out = apply_harmonization(c, model).cohort;
  const auto idx = c.site_index(model.standardization.site_order);
  const double n = static_cast<double>(c.n_subjects());
  for (Eigen::Index f = 0; f < 2; ++f) {
    // per-site mean m_s and n-1 SD s_s; alpha is the grand mean, sigma^2 the pooled SS over N
    double mean[2] = {0, 0}, cnt[2] = {0, 0}, ss[2] = {0, 0};
    for (Eigen::Index i = 0; i < c.features().rows(); ++i) {
      mean[idx[i]] += c.features()(i, f);
      cnt[idx[i]] += 1;
    }
    for (int s = 0; s < 2; ++s) mean[s] /= cnt[s];
    for (Eigen::Index i = 0; i < c.features().rows(); ++i) {
      const double r = c.features()(i, f) - mean[idx[i]];
      ss[idx[i]] += r * r;
    }
    const double alpha = (cnt[0] * mean[0] + cnt[1] * mean[1]) / n;
    const double sigma = std::sqrt((ss[0] + ss[1]) / n);
    double out_mean[2] = {0, 0}, out_ss[2] = {0, 0};
    for (Eigen::Index i = 0; i < c.features().rows(); ++i) {
      const int s = idx[i];
      const double sd = std::sqrt(ss[s] / (cnt[s] - 1));
      const double expected = alpha + sigma * (c.features()(i, f) - mean[s]) / sd;
      CHECK(std::abs(out.features()(i, f) - expected) < 1e-10);
      out_mean[s] += out.features()(i, f) / cnt[s];
    }
    for (Eigen::Index i = 0; i < c.features().rows(); ++i) {
      const double r = out.features()(i, f) - out_mean[idx[i]];
      out_ss[idx[i]] += r * r;
    }
    for (int s = 0; s < 2; ++s) {
      CHECK(std::abs(out_mean[s] - alpha) < 1e-8);
      CHECK(std::abs(out_ss[s] / (cnt[s] - 1) - sigma * sigma) < 1e-8);
    }
  }
}

TEST_CASE("identity site parameters leave the data unchanged") {
  const auto [c, truth] = synth::generate_cohort(small_synth(10));
  auto model = fit_combat_gam(c, gam::default_smooth_spec(c.age()));
  model.site_params.gamma_star.setZero();
  model.site_params.delta2_star.setOnes();
  CHECK(max_abs_diff(apply_harmonization(c, model).cohort.features(), c.features()) < 1e-10);
}

TEST_CASE("re-harmonizing an intercept-only fit") {
  // Harmonized sites all have n-1 variance sigma^2, while the refit sigma^2 uses
  // denominator N, so the refit delta^2 is N / (N - S) rather than 1.
  const auto c = shifted_sites(11, {40, 25, 60}, {0.0, 2.0, -1.0}, {1.0, 3.0, 0.4}, 4);
  const auto first = fit_combat_gam(c, gam::default_smooth_spec(c.age()), intercept_only());
  const auto once = apply_harmonization(c, first).cohort;
  const auto second = fit_combat_gam(once, gam::default_smooth_spec(c.age()), intercept_only());
  const double n = 125.0, s = 3.0;
  CHECK(second.site_params.gamma_hat.cwiseAbs().maxCoeff() < 1e-12);
  CHECK((second.site_params.delta2_hat.array() - n / (n - s)).abs().maxCoeff() < 1e-12);
  CHECK((second.standardization.alpha - first.standardization.alpha).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("affine equivariance") {
  const auto [c, truth] = synth::generate_cohort(small_synth(12));
  const double a = 3.5, b = 2.0;
  const auto scaled = c.with_features((b * c.features().array() + a).matrix());
  for (bool eb : {false, true}) {
    FitOptions opt;
    opt.eb_enabled = eb;
    const auto h0 = apply_harmonization(c, fit_combat_gam(c, gam::default_smooth_spec(c.age()), opt)).cohort;
    const auto h1 = apply_harmonization(scaled, fit_combat_gam(scaled, gam::default_smooth_spec(c.age()), opt)).cohort;
    CHECK(max_abs_diff(h1.features(), (b * h0.features().array() + a).matrix()) < 1e-9);
  }
}

TEST_CASE("EB disabled reproduces the raw estimates") {
  const auto [c, truth] = synth::generate_cohort(small_synth(13));
  FitOptions opt;
  opt.eb_enabled = false;
  const auto model = fit_combat_gam(c, gam::default_smooth_spec(c.age()), opt);
  const auto z = standardize(c, model.standardization).z;
  const auto raw = estimate_site_params(z, c.site_index(model.standardization.site_order), model.standardization.n_sites());
  CHECK(model.site_params.gamma_star == raw.gamma_hat);
  CHECK(model.site_params.delta2_star == raw.delta2_hat);
  CHECK(model.warnings.empty());
}

TEST_CASE("model errors") {
  const auto [c, truth] = synth::generate_cohort(small_synth(14));
  const auto model = fit_combat_gam(c, gam::default_smooth_spec(c.age()));
  SUBCASE("unknown site") {
    auto labels = c.site_labels();
    labels[0] = "elsewhere";
    const auto other = c.with_site_labels(labels);
    CHECK(fixture::error_code([&] { apply_harmonization(other, model); }) == ErrorCode::UnknownSite);
  }
  SUBCASE("feature mismatch") {
    const std::vector<std::size_t> cols{0, 1};
    const auto fewer = c.select_features(cols);
    CHECK(fixture::error_code([&] { apply_harmonization(fewer, model); }) == ErrorCode::DimensionMismatch);
  }
  SUBCASE("feature explained exactly by site") {
    Eigen::MatrixXd y(6, 2);
    y << 1, 0.3, 1, -0.2, 1, 0.5, 3, 0.1, 3, 0.9, 3, -0.4;
    const auto exact = fixture::cohort({"a", "a", "a", "b", "b", "b"}, {0.1, 0.12, 0.14, 0.1, 0.13, 0.15},
                                       {0, 1, 0, 1, 0, 1}, y);
    CHECK(fixture::error_code([&] { fit_combat_gam(exact, gam::default_smooth_spec(c.age()), intercept_only()); }) ==
          ErrorCode::ZeroResidualVariance);
  }
  SUBCASE("single site") {
    auto labels = c.site_labels();
    std::fill(labels.begin(), labels.end(), "only");
    CHECK(fixture::error_code([&] { fit_combat_gam(c.with_site_labels(labels), gam::default_smooth_spec(c.age())); }) ==
          ErrorCode::InvalidCohort);
  }
}

TEST_CASE("model serialization round trip") {
  const auto [c, truth] = synth::generate_cohort(small_synth(15));
  for (bool eb : {true, false}) {
    FitOptions opt;
    opt.eb_enabled = eb;
    const auto model = fit_combat_gam(c, gam::default_smooth_spec(c.age()), opt);
    const auto text = serialize_model(model);
    const auto back = parse_model(text);
    CHECK(serialize_model(back) == text);
    CHECK(back.fingerprint == model.fingerprint);
    CHECK(apply_harmonization(c, back).cohort == apply_harmonization(c, model).cohort);
  }
  CHECK(fixture::error_code([] { parse_model("{\"nope\": 1}"); }).has_value());
  CHECK(fixture::error_code([] { parse_model("not json"); }).has_value());
}

TEST_CASE("fits are deterministic and independent of the thread count") {
  const auto [c, truth] = synth::generate_cohort(small_synth(16));
  FitOptions one;
  one.standardization.threads = 1;
  FitOptions many;
  many.standardization.threads = 5;
  const auto a = serialize_model(fit_combat_gam(c, gam::default_smooth_spec(c.age()), one));
  const auto b = serialize_model(fit_combat_gam(c, gam::default_smooth_spec(c.age()), one));
  const auto d = serialize_model(fit_combat_gam(c, gam::default_smooth_spec(c.age()), many));
  CHECK(a == b);
  // the fingerprint covers only the statistical options, so thread counts compare equal
  CHECK(a == d);
}

TEST_CASE("fingerprint tracks the statistical configuration") {
  const std::vector<double> ages{0.0, 0.02, 0.05, 0.08, 0.1, 0.13, 0.15, 0.18, 0.2, 0.11, 0.07, 0.03};
  const auto spec = gam::default_smooth_spec(ages);
  FitOptions opt;
  const auto base = config_fingerprint(spec, opt);
  CHECK(base.size() == 16);
  opt.eb_enabled = false;
  CHECK(config_fingerprint(spec, opt) != base);
  auto other = spec;
  other.n_basis += 1;
  CHECK(config_fingerprint(other, FitOptions{}) != base);
}
