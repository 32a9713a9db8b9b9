#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "harmon/stats.hpp"
#include "harmon/synth.hpp"

using namespace harmon;
using namespace harmon::stats;

namespace {

struct Grouped {
  std::vector<double> values;
  std::vector<int> groups;
};

Grouped random_groups(oracle::TestRng& rng, int n_groups, int per_group, double shift = 0.0) {
  Grouped g;
  for (int k = 0; k < n_groups; ++k) {
    for (int i = 0; i < per_group; ++i) {
      g.values.push_back(rng.normal() + shift * k);
      g.groups.push_back(k);
    }
  }
  return g;
}

}  // namespace

TEST_CASE("two-group ANOVA example") {
  const std::vector<double> v{0, 1, 2, 3};
  const std::vector<int> g{0, 0, 1, 1};
  const auto r = anova_oneway(v, g);
  CHECK(r.ss_between == doctest::Approx(4.0).epsilon(1e-15));
  CHECK(r.ss_within == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r.f_statistic == 8.0);
  CHECK(r.df_between == 1);
  CHECK(r.df_within == 2);
  CHECK(std::abs(r.p_value - 0.105572809) < 1e-9);
  CHECK(r.eta_squared == doctest::Approx(0.8));
}

TEST_CASE("identical groups give F = 0 and p = 1") {
  const std::vector<double> v{1, 2, 3, 1, 2, 3, 1, 2, 3};
  const std::vector<int> g{0, 0, 0, 1, 1, 1, 2, 2, 2};
  const auto r = anova_oneway(v, g);
  CHECK(r.f_statistic == doctest::Approx(0.0));
  CHECK(r.p_value == doctest::Approx(1.0));
  CHECK_FALSE(r.degenerate);
}

TEST_CASE("null rejection rate stays near the nominal level") {
  oracle::TestRng rng(11);
  int rejected = 0;
  const int reps = 1000;
  for (int rep = 0; rep < reps; ++rep) {
    const auto g = random_groups(rng, 3, 12);
    if (anova_oneway(g.values, g.groups).p_value < 0.05) ++rejected;
  }
  const double rate = static_cast<double>(rejected) / reps;
  CHECK(rate >= 0.03);
  CHECK(rate <= 0.07);
}

TEST_CASE("degenerate group layouts are rejected") {
  const std::vector<double> v{1, 2, 3, 4};
  const std::vector<int> one{0, 0, 0, 0};
  CHECK(fixture::error_code([&] { anova_oneway(v, one); }) == ErrorCode::DegenerateGroups);
  const std::vector<int> singleton{0, 0, 0, 1};
  CHECK(fixture::error_code([&] { anova_oneway(v, singleton); }) == ErrorCode::DegenerateGroups);
  const std::vector<int> short_groups{0, 1};
  CHECK(fixture::error_code([&] { anova_oneway(v, short_groups); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("zero within-group variance is flagged infinite") {
  const std::vector<double> v{1, 1, 1, 5, 5, 5};
  const std::vector<int> g{0, 0, 0, 1, 1, 1};
  const auto r = anova_oneway(v, g);
  CHECK(r.zero_within_variance);
  CHECK(std::isinf(r.f_statistic));
  CHECK(r.p_value == 0.0);
  const auto e = cohens_f(r);
  CHECK(e.infinite);
  CHECK(e.bin == EffectBin::Large);
}

TEST_CASE("constant feature is degenerate with F reported as 0") {
  const std::vector<double> v(8, 2.5);
  const std::vector<int> g{0, 0, 0, 0, 1, 1, 1, 1};
  const auto r = anova_oneway(v, g);
  CHECK(r.degenerate);
  CHECK(r.f_statistic == 0.0);
  CHECK(r.p_value == 1.0);
  CHECK(cohens_f(r).f == 0.0);
}

TEST_CASE("ANOVA is invariant to shift and positive scale") {
  oracle::TestRng rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    const auto g = random_groups(rng, 4, 9, 0.4);
    const double a = rng.uniform(-100.0, 100.0), b = rng.uniform(0.01, 50.0);
    std::vector<double> t(g.values.size());
    std::transform(g.values.begin(), g.values.end(), t.begin(), [&](double v) { return a + b * v; });
    const auto r0 = anova_oneway(g.values, g.groups);
    const auto r1 = anova_oneway(t, g.groups);
    CHECK(std::abs(r0.f_statistic - r1.f_statistic) < 1e-10 * std::max(1.0, r0.f_statistic));
    CHECK(std::abs(r0.p_value - r1.p_value) < 1e-10);
  }
}

TEST_CASE("sums of squares agree with the naive oracle") {
  oracle::TestRng rng(13);
  for (int rep = 0; rep < 100; ++rep) {
    Grouped g;
    const int k = 2 + rep % 5;
    for (int i = 0; i < 60; ++i) {
      g.values.push_back(rng.normal() * 3.0 + 7.0);
      g.groups.push_back(i % k);
    }
    const auto r = anova_oneway(g.values, g.groups);
    const auto o = oracle::anova_sums(g.values, g.groups);
    CHECK(r.ss_between == doctest::Approx(o.ss_between).epsilon(1e-10));
    CHECK(r.ss_within == doctest::Approx(o.ss_within).epsilon(1e-10));
    CHECK(r.f_statistic == doctest::Approx(o.f).epsilon(1e-10));
    CHECK(r.eta_squared == doctest::Approx(o.ss_between / (o.ss_between + o.ss_within)).epsilon(1e-12));
    const auto e = cohens_f(r);
    CHECK(e.f * e.f == doctest::Approx(r.eta_squared / (1.0 - r.eta_squared)).epsilon(1e-10));
  }
}

TEST_CASE("string labels match integer codes") {
  oracle::TestRng rng(14);
  const auto g = random_groups(rng, 3, 10, 0.5);
  std::vector<std::string> labels;
  const char* names[] = {"north", "east", "west"};
  for (int code : g.groups) labels.emplace_back(names[code]);
  const auto a = anova_oneway(g.values, g.groups);
  const auto b = anova_oneway(g.values, std::span<const std::string>(labels));
  CHECK(a.f_statistic == b.f_statistic);
  CHECK(a.p_value == b.p_value);
  CHECK(cohens_f(g.values, g.groups).f == cohens_f(g.values, std::span<const std::string>(labels)).f);
}

TEST_CASE("Cohen's f bins") {
  CHECK(effect_bin(0.0) == EffectBin::Small);
  CHECK(effect_bin(0.1) == EffectBin::Small);
  CHECK(effect_bin(std::nextafter(0.1, 1.0)) == EffectBin::Medium);
  CHECK(effect_bin(0.25) == EffectBin::Medium);
  CHECK(effect_bin(std::nextafter(0.25, 1.0)) == EffectBin::Large);
  CHECK(effect_bin(std::numeric_limits<double>::infinity()) == EffectBin::Large);
  CHECK(to_string(EffectBin::Medium) == "medium");
}

TEST_CASE("two balanced groups: f is half the standardized mean difference") {
  // With the pooled SD taken over N, f = d / 2 exactly; with the n - 2 pooled
  // SD, f = d / 2 * sqrt(N / (N - 2)).
  oracle::TestRng rng(15);
  const int n = 20;
  std::vector<double> a(n), b(n);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal() + 0.8;
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : a) ss += (v - ma) * (v - ma);
  for (double v : b) ss += (v - mb) * (v - mb);
  const double total = 2.0 * n;
  const double d_n = (mb - ma) / std::sqrt(ss / total);
  const double d_df = (mb - ma) / std::sqrt(ss / (total - 2.0));

  std::vector<double> values(a);
  values.insert(values.end(), b.begin(), b.end());
  std::vector<int> groups(2 * n, 0);
  std::fill(groups.begin() + n, groups.end(), 1);
  const double f = cohens_f(values, groups).f;
  CHECK(f == doctest::Approx(d_n / 2.0).epsilon(1e-12));
  CHECK(f == doctest::Approx(d_df / 2.0 * std::sqrt(total / (total - 2.0))).epsilon(1e-12));
}

TEST_CASE("exact effect size construction") {
  // group means -1 and +1 with unit spread inside each group: SS_b / SS_w = 4
  const std::vector<double> v{-2, 0, -2, 0, 0, 2, 0, 2};
  const std::vector<int> g{0, 0, 0, 0, 1, 1, 1, 1};
  const auto e = cohens_f(v, g);
  CHECK(e.f == doctest::Approx(1.0));
  CHECK(e.bin == EffectBin::Large);
}

TEST_CASE("BH example and edge cases") {
  const std::vector<double> p{0.01, 0.04, 0.03, 0.20};
  const auto r = bh_fdr(p, 0.05);
  CHECK(r.adjusted[0] == doctest::Approx(0.04));
  CHECK(r.adjusted[1] == doctest::Approx(0.16 / 3.0));
  CHECK(r.adjusted[2] == doctest::Approx(0.16 / 3.0));
  CHECK(r.adjusted[3] == doctest::Approx(0.20));
  CHECK(r.rejected == std::vector<bool>{true, false, false, false});

  const std::vector<double> single{0.03};
  CHECK(bh_fdr(single, 0.05).rejected[0]);
  CHECK(bh_fdr(single, 0.05).adjusted[0] == 0.03);

  const std::vector<double> ones(10, 1.0);
  const auto none = bh_fdr(ones, 0.05);
  CHECK(std::none_of(none.rejected.begin(), none.rejected.end(), [](bool b) { return b; }));

  CHECK(bh_fdr(std::vector<double>{}, 0.05).adjusted.empty());
  for (double q : {0.0, 1.0, -0.1, std::numeric_limits<double>::quiet_NaN()}) {
    CHECK(fixture::error_code([&] { bh_fdr(p, q); }) == ErrorCode::InvalidConfig);
  }
  const std::vector<double> bad{0.5, 1.5};
  CHECK(fixture::error_code([&] { bh_fdr(bad, 0.05); }) == ErrorCode::InvalidValue);
}

TEST_CASE("BH agrees with the brute-force step-up on random vectors") {
  oracle::TestRng rng(16);
  for (int rep = 0; rep < 1000; ++rep) {
    const auto m = static_cast<std::size_t>(1 + rng.uniform(0.0, 120.0));
    std::vector<double> p(m);
    for (auto& v : p) {
      // mix of signal, ties and nulls
      const double u = rng.uniform(0.0, 1.0);
      v = u < 0.3 ? std::pow(rng.uniform(0.0, 1.0), 6.0) : (u < 0.4 ? 0.01 : rng.uniform(0.0, 1.0));
    }
    const double q = rep % 7 == 0 ? 0.999 : rng.uniform(0.001, 0.3);
    const auto got = bh_fdr(p, q);
    const auto want = oracle::bh_step_up(p, q);
    REQUIRE(got.rejected == want.rejected);
    for (std::size_t i = 0; i < m; ++i) CHECK(std::abs(got.adjusted[i] - want.adjusted[i]) < 1e-15);
  }
}

TEST_CASE("BH adjusted values are monotone in the raw p-values and rejections form a prefix") {
  oracle::TestRng rng(17);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> p(50);
    for (auto& v : p) v = std::pow(rng.uniform(0.0, 1.0), 3.0);
    const auto r = bh_fdr(p, 0.1);
    std::vector<std::size_t> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
    bool seen_accept = false;
    for (std::size_t k = 0; k < order.size(); ++k) {
      if (k > 0) CHECK(r.adjusted[order[k]] >= r.adjusted[order[k - 1]]);
      CHECK(r.adjusted[order[k]] >= p[order[k]]);
      CHECK(r.rejected[order[k]] == (r.adjusted[order[k]] <= 0.1));
      if (!r.rejected[order[k]]) seen_accept = true;
      if (seen_accept && p[order[k]] > p[order[k - (k > 0 ? 1 : 0)]]) CHECK_FALSE(r.rejected[order[k]]);
    }
  }
}

TEST_CASE("family rules") {
  FamilyRule prefix;
  CHECK(prefix.family_of("FA_b12") == "FA");
  CHECK(prefix.family_of("plain") == "plain");
  FamilyRule single{FamilyRuleKind::Single, {}};
  CHECK(single.family_of("FA_b12") == single.family_of("MD_b3"));

  const auto dir = std::filesystem::temp_directory_path() / "harmon_test_family";
  std::filesystem::create_directories(dir);
  const auto path = dir / "families.csv";
  {
    std::ofstream out(path);
    out << "feature,family\nFA_b1,white\nFA_b2,white\nFA_b3,grey\n";
  }
  const auto map = read_family_file(path);
  CHECK(map.kind == FamilyRuleKind::Map);
  CHECK(map.family_of("FA_b3") == "grey");
  CHECK(fixture::error_code([&] { map.family_of("FA_b9"); }) == ErrorCode::InvalidConfig);
  {
    std::ofstream out(path);
    out << "feature,family\nFA_b1,white\nFA_b1,grey\n";
  }
  CHECK(fixture::error_code([&] { read_family_file(path); }) == ErrorCode::ParseError);
  CHECK(fixture::error_code([&] { read_family_file(dir / "absent.csv"); }) == ErrorCode::Io);
  std::filesystem::remove_all(dir);
}

TEST_CASE("evaluate_cohort input checks") {
  Eigen::MatrixXd feat(4, 1);
  feat << 1, 2, 3, 4;
  const auto one_site = fixture::cohort({"a", "a", "a", "a"}, {0.1, 0.2, 0.3, 0.4}, {0, 1, 0, 1}, feat);
  CHECK(fixture::error_code([&] { evaluate_cohort(one_site); }) == ErrorCode::DegenerateGroups);

  const auto tiny = fixture::cohort({"a", "a", "a", "b"}, {0.1, 0.2, 0.3, 0.4}, {0, 1, 0, 1}, feat);
  CHECK(fixture::error_code([&] { evaluate_cohort(tiny); }) == ErrorCode::InvalidCohort);

  EvaluateOptions bad;
  bad.q = 1.0;
  CHECK(fixture::error_code([&] { evaluate_cohort(one_site, bad); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("evaluate_cohort flags constant features and keeps the rest") {
  oracle::TestRng rng(18);
  const int n = 30;
  std::vector<std::string> sites;
  std::vector<double> age;
  std::vector<int> sex;
  Eigen::MatrixXd feat(n, 3);
  for (int i = 0; i < n; ++i) {
    sites.push_back(i % 3 == 0 ? "x" : (i % 3 == 1 ? "y" : "z"));
    age.push_back(rng.uniform(0.0, 0.2));
    sex.push_back(i % 2);
    feat(i, 0) = rng.normal();
    feat(i, 1) = 4.0;
    feat(i, 2) = rng.normal() + (i % 3 == 0 ? 3.0 : 0.0);
  }
  const auto c = fixture::cohort(sites, age, sex, feat, {"FA_b1", "FA_b2", "MD_b1"});
  const auto r = evaluate_cohort(c);
  REQUIRE(r.features.size() == 3);
  CHECK(r.flagged == 1);
  CHECK(r.features[1].anova.degenerate);
  CHECK(r.features[2].rejected);
  CHECK(r.families.size() == 2);
  CHECK(r.families[0].family == "FA");
  CHECK(r.families[0].tests == 2);
  CHECK(r.n_sites == 3);
  CHECK(r.n_subjects == 30);
}

TEST_CASE("evaluation on a simulated cohort") {
  synth::SynthConfig cfg;
  cfg.n_bundles = 10;
  cfg.seed = 5;
  const auto [cohort, truth] = synth::generate_cohort(cfg);
  EvaluateOptions opt;
  const auto r = evaluate_cohort(cohort, opt);
  CHECK(r.features.size() == 40);
  CHECK(r.bins.total() == 40);
  CHECK(r.bins.percent(EffectBin::Small) + r.bins.percent(EffectBin::Medium) + r.bins.percent(EffectBin::Large) ==
        doctest::Approx(100.0));
  REQUIRE(r.families.size() == 4);
  for (const auto& fam : r.families) {
    CHECK(fam.tests == 10);
    CHECK(fam.rejections <= fam.tests);
  }
  CHECK(r.rejections > 20);

  opt.families = FamilyRule{FamilyRuleKind::Single, {}};
  const auto pooled = evaluate_cohort(cohort, opt);
  CHECK(pooled.families.size() == 1);
  CHECK(pooled.families[0].tests == 40);

  // same result for any thread count
  opt.threads = 1;
  const auto serial = evaluate_cohort(cohort, opt);
  opt.threads = 4;
  CHECK(report_to_json(serial) == report_to_json(evaluate_cohort(cohort, opt)));
}

TEST_CASE("residualization removes a covariate-driven site effect") {
  // Site a is mostly sex 1, site b mostly sex 0; the feature depends on sex only.
  oracle::TestRng rng(19);
  const int n = 200;
  std::vector<std::string> sites;
  std::vector<double> age;
  std::vector<int> sex;
  Eigen::MatrixXd feat(n, 1);
  for (int i = 0; i < n; ++i) {
    const bool a = i < n / 2;
    sites.push_back(a ? "a" : "b");
    age.push_back(rng.uniform(0.0, 0.2));
    sex.push_back(rng.uniform(0.0, 1.0) < (a ? 0.85 : 0.15) ? 1 : 0);
    feat(i, 0) = 2.0 * sex.back() + 0.3 * rng.normal();
  }
  const auto c = fixture::cohort(sites, age, sex, feat);
  EvaluateOptions opt;
  const auto raw = evaluate_cohort(c, opt);
  CHECK(raw.features[0].rejected);
  CHECK(raw.features[0].effect.bin == EffectBin::Large);
  opt.residualize = true;
  const auto adj = evaluate_cohort(c, opt);
  CHECK(adj.residualized);
  CHECK_FALSE(adj.features[0].rejected);
  CHECK(adj.features[0].effect.f < 0.1);
}

TEST_CASE("summary text and serialization") {
  synth::SynthConfig cfg;
  cfg.n_bundles = 5;
  const auto [cohort, truth] = synth::generate_cohort(cfg);
  const auto r = evaluate_cohort(cohort);
  const auto text = format_summary(r);
  CHECK(text.find(" of 20 significant after FDR (BH, q = 0.05, 4 families)") != std::string::npos);
  CHECK(text.find("  AD: ") != std::string::npos);
  CHECK(text.find("median Cohen's f") != std::string::npos);
  CHECK(text.find("Cohen's f: ") != std::string::npos);

  const auto json = report_to_json(r);
  const auto back = report_from_json(json);
  CHECK(report_to_json(back) == json);
  CHECK(back.features.size() == r.features.size());
  CHECK(back.features[3].anova.p_value == r.features[3].anova.p_value);

  const auto csv = report_to_csv(r);
  CHECK(csv.rfind("feature,family,f_statistic,df_between,df_within,p_value,p_adjusted,rejected,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 21);
}

TEST_CASE("median") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
}
