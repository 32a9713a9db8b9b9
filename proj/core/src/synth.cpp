#include "harmon/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <unordered_map>

#include <json.hpp>

#include "harmon/error.hpp"

namespace harmon::synth {

std::string_view to_string(Trajectory t) noexcept {
  switch (t) {
    case Trajectory::SaturatingExp: return "saturating_exp";
    case Trajectory::Quadratic: return "quadratic";
  }
  return "unknown";
}

Trajectory parse_trajectory(std::string_view name) {
  if (name == "saturating_exp") return Trajectory::SaturatingExp;
  if (name == "quadratic" || name == "polynomial") return Trajectory::Quadratic;
  throw Error(ErrorCode::InvalidConfig, "unknown trajectory '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Rng

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::gamma(double shape) {
  if (shape < 1.0) {
    // Boost to shape + 1, then scale by U^(1/shape).
    const double g = gamma(shape + 1.0);
    return g * std::pow(1.0 - uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x = 0.0;
    double v = 0.0;
    do {
      x = normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = 1.0 - uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

// ---------------------------------------------------------------------------
// Config

void SynthConfig::check() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (n_sites < 2) fail("simulation needs at least 2 sites (got " + std::to_string(n_sites) + ")");
  if (!subjects_per_site.empty()) {
    if (static_cast<int>(subjects_per_site.size()) != n_sites) {
      fail("subjects_per_site must list one size per site");
    }
    for (int n : subjects_per_site) {
      if (n < static_cast<int>(kMinSiteSize)) fail("every site needs at least 3 subjects");
    }
  } else if (total_subjects < n_sites * static_cast<int>(kMinSiteSize)) {
    fail("total_subjects must give every site at least 3 subjects");
  }
  if (metrics.empty() || n_bundles < 1 || n_features() < 2) fail("simulation needs at least 2 features");
  if (!(age_min >= 0.0 && age_min < age_max)) fail("age range must satisfy 0 <= min < max");
  if (!(alpha_min <= alpha_max)) fail("alpha range is empty");
  if (!(0.0 <= amplitude_min && amplitude_min <= amplitude_max)) fail("amplitude range must be nonnegative and nonempty");
  if (!(0.0 < tau_min && tau_min <= tau_max)) fail("tau range must be positive and nonempty");
  if (!(beta_sex_min <= beta_sex_max)) fail("beta_sex range is empty");
  if (!(gamma_sd >= 0.0)) fail("gamma_sd must be >= 0");
  if (!(noise_sd >= 0.0)) fail("noise_sd must be >= 0");
  if (!delta_fixed && !(delta_shape > 2.0 && delta_scale > 0.0)) {
    fail("delta law needs shape > 2 (finite variance) and scale > 0");
  }
}

std::vector<int> SynthConfig::site_sizes() const {
  if (!subjects_per_site.empty()) return subjects_per_site;
  // Even split, remainder to the first sites.
  std::vector<int> sizes(static_cast<std::size_t>(n_sites), total_subjects / n_sites);
  for (int s = 0; s < total_subjects % n_sites; ++s) ++sizes[static_cast<std::size_t>(s)];
  return sizes;
}

std::vector<std::string> SynthConfig::site_labels() const {
  std::vector<std::string> out;
  char buf[32];
  for (int s = 0; s < n_sites; ++s) {
    std::snprintf(buf, sizeof buf, "scanner%02d", s + 1);
    out.emplace_back(buf);
  }
  return out;
}

std::vector<std::string> SynthConfig::feature_names() const {
  std::vector<std::string> out;
  char buf[32];
  for (const auto& metric : metrics) {
    for (int b = 0; b < n_bundles; ++b) {
      std::snprintf(buf, sizeof buf, "bundle%02d", b + 1);
      out.push_back(metric + "_" + buf);
    }
  }
  return out;
}

double SynthGroundTruth::age_effect(Eigen::Index feature, double age) const {
  switch (trajectory) {
    case Trajectory::SaturatingExp:
      return amplitude(feature) * (1.0 - std::exp(-(age - age_min) / tau(feature)));
    case Trajectory::Quadratic: {
      const double t = (age - age_min) / (age_max - age_min);
      return amplitude(feature) * t * t;
    }
  }
  return 0.0;
}

std::pair<CohortTable, SynthGroundTruth> generate_cohort(const SynthConfig& config) {
  config.check();
  Rng rng(config.seed);
  const auto sizes = config.site_sizes();
  const auto labels = config.site_labels();
  const auto names = config.feature_names();
  const auto n_feat = static_cast<Eigen::Index>(names.size());
  const auto n_sites = static_cast<Eigen::Index>(sizes.size());

  // 1. covariates
  std::vector<std::string> ids, sites;
  std::vector<double> ages;
  std::vector<int> sexes;
  std::vector<int> site_of;
  char buf[32];
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    for (int k = 0; k < sizes[s]; ++k) {
      std::snprintf(buf, sizeof buf, "sub-%04zu", ids.size() + 1);
      ids.emplace_back(buf);
      sites.push_back(labels[s]);
      site_of.push_back(static_cast<int>(s));
      ages.push_back(rng.uniform(config.age_min, config.age_max));
      sexes.push_back(rng.coin() ? 1 : 0);
    }
  }
  const auto n = static_cast<Eigen::Index>(ids.size());

  // 2. per-feature parameters
  SynthGroundTruth truth;
  truth.seed = config.seed;
  truth.trajectory = config.trajectory;
  truth.age_min = config.age_min;
  truth.age_max = config.age_max;
  truth.feature_names = names;
  truth.site_order = labels;
  truth.alpha.resize(n_feat);
  truth.amplitude.resize(n_feat);
  truth.tau.resize(n_feat);
  truth.beta_sex.resize(n_feat);
  truth.noise_sd = Eigen::VectorXd::Constant(n_feat, config.noise_sd);
  for (Eigen::Index f = 0; f < n_feat; ++f) {
    truth.alpha(f) = rng.uniform(config.alpha_min, config.alpha_max);
    const double magnitude = rng.uniform(config.amplitude_min, config.amplitude_max);
    truth.amplitude(f) = rng.coin() ? magnitude : -magnitude;
    truth.tau(f) = rng.uniform(config.tau_min, config.tau_max);
    truth.beta_sex(f) = rng.uniform(config.beta_sex_min, config.beta_sex_max);
  }

  // 3. additive site effects, 4. multiplicative site effects
  truth.gamma.resize(n_sites, n_feat);
  for (Eigen::Index s = 0; s < n_sites; ++s) {
    for (Eigen::Index f = 0; f < n_feat; ++f) truth.gamma(s, f) = config.gamma_sd * rng.normal();
  }
  truth.delta2.resize(n_sites, n_feat);
  for (Eigen::Index s = 0; s < n_sites; ++s) {
    for (Eigen::Index f = 0; f < n_feat; ++f) {
      truth.delta2(s, f) = config.delta_fixed ? 1.0 : config.delta_scale / rng.gamma(config.delta_shape);
    }
  }

  // 5. noise, subject-major
  Eigen::MatrixXd y(n, n_feat);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const int s = site_of[iu];
    for (Eigen::Index f = 0; f < n_feat; ++f) {
      const double eps = rng.normal();
      y(i, f) = truth.alpha(f) + truth.age_effect(f, ages[iu]) + truth.beta_sex(f) * sexes[iu] +
                truth.gamma(s, f) + std::sqrt(truth.delta2(s, f)) * truth.noise_sd(f) * eps;
    }
  }
  CohortTable cohort(std::move(ids), std::move(sites), std::move(ages), std::move(sexes), std::move(y), names);
  return {std::move(cohort), std::move(truth)};
}

// ---------------------------------------------------------------------------
// Recovery

double pearson(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw Error(ErrorCode::DimensionMismatch, "correlation needs two equal-length vectors of length >= 2");
  }
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double denom = std::sqrt(da.square().sum() * db.square().sum());
  return denom > 0.0 ? (da * db).sum() / denom : 0.0;
}

namespace {

double rmse(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

Eigen::VectorXd flat(const Eigen::MatrixXd& m) { return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size()); }

// Correlation is undefined for a constant side; pearson reports 0 there.
double safe_corr(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.size() < 2) return 0.0;
  return pearson(flat(a), flat(b));
}

}  // namespace

RecoveryMetrics score_recovery(const SynthGroundTruth& truth, const combat::HarmonizationModel& model) {
  const auto& sm = model.standardization;
  if (sm.feature_names != truth.feature_names) {
    throw Error(ErrorCode::DimensionMismatch, "model and truth describe different features");
  }
  if (sm.site_order.size() != truth.site_order.size()) {
    throw Error(ErrorCode::DimensionMismatch, "model and truth have different site counts");
  }
  std::unordered_map<std::string, Eigen::Index> truth_site;
  for (std::size_t s = 0; s < truth.site_order.size(); ++s) {
    truth_site.emplace(truth.site_order[s], static_cast<Eigen::Index>(s));
  }
  const auto n_sites = static_cast<Eigen::Index>(sm.site_order.size());
  const auto n_feat = static_cast<Eigen::Index>(sm.feature_names.size());
  Eigen::MatrixXd gamma_id(n_sites, n_feat);
  Eigen::MatrixXd delta2_id(n_sites, n_feat);
  for (Eigen::Index s = 0; s < n_sites; ++s) {
    auto it = truth_site.find(sm.site_order[static_cast<std::size_t>(s)]);
    if (it == truth_site.end()) {
      throw Error(ErrorCode::DimensionMismatch, "site '" + sm.site_order[static_cast<std::size_t>(s)] + "' not in truth");
    }
    gamma_id.row(s) = truth.gamma.row(it->second);
    delta2_id.row(s) = truth.delta2.row(it->second);
  }
  const Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(sm.site_weights.data(), n_sites);
  const Eigen::RowVectorXd centre = w.transpose() * gamma_id;
  for (Eigen::Index f = 0; f < n_feat; ++f) {
    gamma_id.col(f) = (gamma_id.col(f).array() - centre(f)) / sm.sigma(f);
    const double ratio = truth.noise_sd(f) / sm.sigma(f);
    delta2_id.col(f) *= ratio * ratio;
  }

  const auto& sp = model.site_params;
  RecoveryMetrics m;
  m.corr_gamma_hat = safe_corr(gamma_id, sp.gamma_hat);
  m.rmse_gamma_hat = rmse(gamma_id, sp.gamma_hat);
  m.corr_gamma_star = safe_corr(gamma_id, sp.gamma_star);
  m.rmse_gamma_star = rmse(gamma_id, sp.gamma_star);
  m.corr_delta2_hat = safe_corr(delta2_id, sp.delta2_hat);
  m.rmse_delta2_hat = rmse(delta2_id, sp.delta2_hat);
  m.corr_delta2_star = safe_corr(delta2_id, sp.delta2_star);
  m.rmse_delta2_star = rmse(delta2_id, sp.delta2_star);
  const Eigen::VectorXd beta_err = sm.beta_sex - truth.beta_sex;
  m.rmse_beta_sex = std::sqrt(beta_err.squaredNorm() / static_cast<double>(n_feat));
  m.max_abs_error_beta_sex = beta_err.cwiseAbs().maxCoeff();
  return m;
}

// ---------------------------------------------------------------------------
// Truth file

namespace {

using nlohmann::json;

json vec_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vec_json(m.row(r).transpose()));
  return out;
}

Eigen::VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

Eigen::MatrixXd json_mat(const json& j) {
  if (j.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j.at(0).size()));
  for (std::size_t r = 0; r < j.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = json_vec(j.at(r)).transpose();
  return m;
}

}  // namespace

std::string truth_to_json(const SynthGroundTruth& truth) {
  json doc = {
      {"format", "harmon-synth-truth"},
      {"version", 1},
      {"seed", truth.seed},
      {"prng", "mt19937_64"},
      {"normal_transform", "box-muller (cosine branch)"},
      {"delta_law", "inverse-gamma via 1/Gamma (Marsaglia-Tsang)"},
      {"trajectory", std::string(to_string(truth.trajectory))},
      {"age_range", {truth.age_min, truth.age_max}},
      {"feature_names", truth.feature_names},
      {"site_order", truth.site_order},
      {"alpha", vec_json(truth.alpha)},
      {"amplitude", vec_json(truth.amplitude)},
      {"tau", vec_json(truth.tau)},
      {"beta_sex", vec_json(truth.beta_sex)},
      {"noise_sd", vec_json(truth.noise_sd)},
      {"gamma", mat_json(truth.gamma)},
      {"delta2", mat_json(truth.delta2)},
  };
  return doc.dump(2) + "\n";
}

SynthGroundTruth truth_from_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    if (doc.at("format").get<std::string>() != "harmon-synth-truth") {
      throw Error(ErrorCode::ParseError, "not a ground-truth file");
    }
    SynthGroundTruth t;
    t.seed = doc.at("seed").get<std::uint64_t>();
    t.trajectory = parse_trajectory(doc.at("trajectory").get<std::string>());
    t.age_min = doc.at("age_range").at(0).get<double>();
    t.age_max = doc.at("age_range").at(1).get<double>();
    t.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
    t.site_order = doc.at("site_order").get<std::vector<std::string>>();
    t.alpha = json_vec(doc.at("alpha"));
    t.amplitude = json_vec(doc.at("amplitude"));
    t.tau = json_vec(doc.at("tau"));
    t.beta_sex = json_vec(doc.at("beta_sex"));
    t.noise_sd = json_vec(doc.at("noise_sd"));
    t.gamma = json_mat(doc.at("gamma"));
    t.delta2 = json_mat(doc.at("delta2"));
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("truth file: ") + e.what());
  }
}

void write_truth(const SynthGroundTruth& truth, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << truth_to_json(truth);
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path.string() + "'");
}

}  // namespace harmon::synth
