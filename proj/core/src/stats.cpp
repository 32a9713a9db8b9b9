#include "harmon/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <Eigen/QR>

#include "harmon/error.hpp"
#include "harmon/parallel.hpp"

namespace harmon::stats {

namespace {

std::vector<int> encode_labels(std::span<const std::string> labels) {
  std::unordered_map<std::string, int> codes;
  std::vector<int> out;
  out.reserve(labels.size());
  for (const auto& l : labels) {
    auto [it, inserted] = codes.emplace(l, static_cast<int>(codes.size()));
    out.push_back(it->second);
  }
  return out;
}

}  // namespace

AnovaResult anova_oneway(std::span<const double> values, std::span<const int> groups) {
  if (values.size() != groups.size()) {
    throw Error(ErrorCode::DimensionMismatch, "values and group labels differ in length");
  }
  std::map<int, std::pair<std::size_t, double>> acc;  // count, sum
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& a = acc[groups[i]];
    ++a.first;
    a.second += values[i];
  }
  if (acc.size() < 2) {
    throw Error(ErrorCode::DegenerateGroups, "ANOVA needs at least 2 groups, found " + std::to_string(acc.size()));
  }
  for (const auto& [g, a] : acc) {
    if (a.first < 2) {
      throw Error(ErrorCode::DegenerateGroups, "group " + std::to_string(g) + " has fewer than 2 values");
    }
  }
  const double n = static_cast<double>(values.size());
  const double grand = std::accumulate(values.begin(), values.end(), 0.0) / n;
  std::map<int, double> means;
  AnovaResult r;
  for (const auto& [g, a] : acc) {
    const double mean = a.second / static_cast<double>(a.first);
    means[g] = mean;
    r.ss_between += static_cast<double>(a.first) * (mean - grand) * (mean - grand);
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - means[groups[i]];
    r.ss_within += d * d;
  }
  r.df_between = static_cast<int>(acc.size()) - 1;
  r.df_within = static_cast<int>(values.size() - acc.size());
  const double ss_total = r.ss_between + r.ss_within;

  if (!(ss_total > 0.0)) {
    r.degenerate = true;
    r.f_statistic = 0.0;
    r.p_value = 1.0;
    r.eta_squared = 0.0;
    return r;
  }
  r.eta_squared = r.ss_between / ss_total;
  if (r.ss_within <= ss_total * 1e-15) {
    r.zero_within_variance = true;
    r.f_statistic = std::numeric_limits<double>::infinity();
    r.p_value = 0.0;
    r.eta_squared = 1.0;
    return r;
  }
  r.f_statistic = (r.ss_between / r.df_between) / (r.ss_within / r.df_within);
  r.p_value = f_sf(r.f_statistic, r.df_between, r.df_within);
  return r;
}

AnovaResult anova_oneway(std::span<const double> values, std::span<const std::string> groups) {
  const auto codes = encode_labels(groups);
  return anova_oneway(values, codes);
}

std::string_view to_string(EffectBin bin) noexcept {
  switch (bin) {
    case EffectBin::Small: return "small";
    case EffectBin::Medium: return "medium";
    case EffectBin::Large: return "large";
  }
  return "unknown";
}

EffectBin effect_bin(double f) noexcept {
  if (f <= kSmallEffectMax) return EffectBin::Small;
  if (f <= kMediumEffectMax) return EffectBin::Medium;
  return EffectBin::Large;
}

EffectSize cohens_f(const AnovaResult& anova) {
  EffectSize e;
  e.feature = anova.feature;
  e.eta_squared = anova.eta_squared;
  if (anova.zero_within_variance) {
    e.infinite = true;
    e.f = std::numeric_limits<double>::infinity();
  } else if (!anova.degenerate) {
    // sqrt(eta^2 / (1 - eta^2)) without the cancellation in 1 - eta^2.
    e.f = std::sqrt(anova.ss_between / anova.ss_within);
  }
  e.bin = effect_bin(e.f);
  return e;
}

EffectSize cohens_f(std::span<const double> values, std::span<const int> groups) {
  return cohens_f(anova_oneway(values, groups));
}

EffectSize cohens_f(std::span<const double> values, std::span<const std::string> groups) {
  return cohens_f(anova_oneway(values, groups));
}

FdrResult bh_fdr(std::span<const double> p_values, double q) {
  if (!(q > 0.0 && q < 1.0)) throw Error(ErrorCode::InvalidConfig, "FDR level q must lie in (0, 1)");
  const std::size_t m = p_values.size();
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidValue, "p-values must lie in [0, 1]");
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return p_values[a] < p_values[b]; });

  FdrResult out;
  out.adjusted.assign(m, 1.0);
  out.rejected.assign(m, false);
  double running = 1.0;
  for (std::size_t rank = m; rank-- > 0;) {
    const double scaled = static_cast<double>(m) * p_values[order[rank]] / static_cast<double>(rank + 1);
    running = std::min(running, std::min(1.0, scaled));
    // m p / m can round below p
    out.adjusted[order[rank]] = std::max(running, p_values[order[rank]]);
  }
  for (std::size_t i = 0; i < m; ++i) out.rejected[i] = out.adjusted[i] <= q;
  return out;
}

std::string FamilyRule::family_of(const std::string& feature) const {
  switch (kind) {
    case FamilyRuleKind::Single:
      return "all";
    case FamilyRuleKind::Map: {
      auto it = mapping.find(feature);
      if (it == mapping.end()) {
        throw Error(ErrorCode::InvalidConfig, "feature '" + feature + "' has no family in the family file");
      }
      return it->second;
    }
    case FamilyRuleKind::Prefix:
      break;
  }
  const auto pos = feature.find('_');
  return pos == std::string::npos ? feature : feature.substr(0, pos);
}

std::string_view to_string(FamilyRuleKind kind) noexcept {
  switch (kind) {
    case FamilyRuleKind::Prefix: return "prefix";
    case FamilyRuleKind::Single: return "single";
    case FamilyRuleKind::Map: return "file";
  }
  return "unknown";
}

std::string FamilyRule::describe() const { return std::string(to_string(kind)); }

FamilyRule read_family_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open family file '" + path.string() + "'");
  FamilyRule rule;
  rule.kind = FamilyRuleKind::Map;
  std::string line;
  bool header = true;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw Error(ErrorCode::ParseError, "family file line " + std::to_string(line_no) + " needs feature,family");
    }
    if (!rule.mapping.emplace(line.substr(0, comma), line.substr(comma + 1)).second) {
      throw Error(ErrorCode::ParseError, "family file assigns '" + line.substr(0, comma) + "' twice");
    }
  }
  return rule;
}

double BinCounts::percent(EffectBin bin) const {
  const std::size_t n = total();
  if (n == 0) return 0.0;
  const std::size_t c = bin == EffectBin::Small ? small : bin == EffectBin::Medium ? medium : large;
  return 100.0 * static_cast<double>(c) / static_cast<double>(n);
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

// Residuals of y ~ 1 + sex + covariates + f(age), lambda by GCV on partial residuals.
Eigen::MatrixXd residualize(const CohortTable& cohort, const gam::SmoothSpec& spec, int threads) {
  const auto n = static_cast<Eigen::Index>(cohort.n_subjects());
  const Eigen::Index n_cov = cohort.covariates().cols();
  Eigen::MatrixXd fixed(n, 2 + n_cov);
  fixed.col(0).setOnes();
  for (Eigen::Index i = 0; i < n; ++i) fixed(i, 1) = cohort.sex()[static_cast<std::size_t>(i)];
  if (n_cov > 0) fixed.rightCols(n_cov) = cohort.covariates();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(fixed);

  Eigen::MatrixXd out(n, cohort.features().cols());
  parallel_for(static_cast<std::size_t>(out.cols()), threads, [&](std::size_t fi) {
    const auto f = static_cast<Eigen::Index>(fi);
    const Eigen::VectorXd y = cohort.features().col(f);
    const Eigen::VectorXd partial = y - fixed * qr.solve(y);
    const double lambda =
        gam::select_lambda_gcv(cohort.age(), std::span<const double>(partial.data(), partial.size()), spec).lambda;
    const auto fit = gam::fit_additive(cohort.age(), fixed, std::span<const double>(y.data(), y.size()), spec, lambda);
    out.col(f) = y - fit.fitted;
  });
  return out;
}

}  // namespace

EvaluationReport evaluate_cohort(const CohortTable& cohort, const EvaluateOptions& options) {
  if (!(options.q > 0.0 && options.q < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "FDR level q must lie in (0, 1)");
  }
  // Constant features are reported as flagged rows rather than rejecting the run.
  std::vector<Violation> blocking;
  for (auto& v : validate(cohort)) {
    if (v.kind != ViolationKind::ZeroVariance) blocking.push_back(std::move(v));
  }
  if (!blocking.empty()) {
    std::string msg;
    for (const auto& v : blocking) msg += " " + v.to_string();
    throw Error(ErrorCode::InvalidCohort, "cohort failed validation:" + msg);
  }
  const auto order = cohort.site_order();
  if (order.size() < 2) {
    throw Error(ErrorCode::DegenerateGroups, "evaluation needs at least 2 sites, found " + std::to_string(order.size()));
  }
  const auto groups = cohort.site_index(order);

  EvaluationReport report;
  report.q = options.q;
  report.family_rule = options.families.describe();
  report.n_subjects = cohort.n_subjects();
  report.n_sites = order.size();
  report.residualized = options.residualize;

  const Eigen::MatrixXd values =
      options.residualize ? residualize(cohort, options.spec, options.threads) : cohort.features();

  const std::size_t n_feat = cohort.n_features();
  report.features.resize(n_feat);
  parallel_for(n_feat, options.threads, [&](std::size_t fi) {
    const auto col = values.col(static_cast<Eigen::Index>(fi));
    auto& fr = report.features[fi];
    fr.anova = anova_oneway(std::span<const double>(col.data(), col.size()), groups);
    fr.anova.feature = cohort.feature_names()[fi];
    fr.effect = cohens_f(fr.anova);
    fr.family = options.families.family_of(fr.anova.feature);
  });

  std::map<std::string, std::vector<std::size_t>> by_family;
  for (std::size_t i = 0; i < n_feat; ++i) by_family[report.features[i].family].push_back(i);
  for (const auto& [family, members] : by_family) {
    std::vector<double> p, f;
    for (auto i : members) {
      p.push_back(report.features[i].anova.p_value);
      f.push_back(report.features[i].effect.f);
    }
    const auto fdr = bh_fdr(p, options.q);
    FamilySummary summary{family, members.size(), 0, median(f)};
    for (std::size_t k = 0; k < members.size(); ++k) {
      auto& fr = report.features[members[k]];
      fr.p_adjusted = fdr.adjusted[k];
      fr.rejected = fdr.rejected[k];
      if (fr.rejected) ++summary.rejections;
    }
    report.rejections += summary.rejections;
    report.families.push_back(summary);
  }
  for (const auto& fr : report.features) {
    switch (fr.effect.bin) {
      case EffectBin::Small: ++report.bins.small; break;
      case EffectBin::Medium: ++report.bins.medium; break;
      case EffectBin::Large: ++report.bins.large; break;
    }
    if (fr.anova.degenerate || fr.anova.zero_within_variance) ++report.flagged;
  }
  return report;
}

std::string format_summary(const EvaluationReport& report) {
  char buf[256];
  std::string out;
  std::snprintf(buf, sizeof buf, "%zu of %zu significant after FDR (BH, q = %.2f, %zu families)\n",
                report.rejections, report.features.size(), report.q, report.families.size());
  out += buf;
  for (const auto& fam : report.families) {
    std::snprintf(buf, sizeof buf, "  %s: %zu of %zu significant, median Cohen's f %.3f\n", fam.family.c_str(),
                  fam.rejections, fam.tests, fam.median_f);
    out += buf;
  }
  std::snprintf(buf, sizeof buf,
                "Cohen's f: %zu (%.1f%%) small, %zu (%.1f%%) medium, %zu (%.1f%%) large\n",
                report.bins.small, report.bins.percent(EffectBin::Small), report.bins.medium,
                report.bins.percent(EffectBin::Medium), report.bins.large, report.bins.percent(EffectBin::Large));
  out += buf;
  if (report.flagged > 0) {
    std::snprintf(buf, sizeof buf, "%zu feature(s) flagged degenerate\n", report.flagged);
    out += buf;
  }
  return out;
}

}  // namespace harmon::stats
