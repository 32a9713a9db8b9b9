#include "cli.hpp"

#include <algorithm>
#include <cstdint>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "harmon/error.hpp"

namespace harmon::cli {

namespace {

// Flag values before they are layered over the config file.
struct Flags {
  std::optional<std::string> in, out, config, model, pre, post, apply_model, family_file, family_rule;
  std::optional<std::string> subject_column, site_column, age_column, sex_column;
  std::vector<std::string> covariates;
  std::optional<int> n_basis, degree, penalty_order, threads;
  std::optional<double> q, age_min, age_max;
  std::optional<std::uint64_t> seed;
  bool no_eb = false;
  bool residualize = false;
  bool svg = false;

  std::optional<int> sites, subjects, bundles;
  std::vector<int> subjects_per_site;
  std::optional<std::string> trajectory;
  std::optional<double> gamma_sd, noise_sd, delta_shape, delta_scale;
  bool delta_fixed = false;
};

void add_shared(CLI::App& app, Flags& f) {
  app.add_option("--out", f.out, "Output directory");
  app.add_option("--config", f.config, "JSON config file; flags take precedence");
  app.add_option("--seed", f.seed, "Random seed");
  app.add_option("--threads", f.threads, "Worker threads (0: all cores)");
  app.add_option("--age-min", f.age_min, "Lower age bound in years");
  app.add_option("--age-max", f.age_max, "Upper age bound in years");
}

void add_input(CLI::App& app, Flags& f) {
  app.add_option("--in", f.in, "Cohort CSV");
  app.add_option("--subject-column", f.subject_column, "Subject id column (default subject)");
  app.add_option("--site-column", f.site_column, "Site column (default site)");
  app.add_option("--age-column", f.age_column, "Age column (default age)");
  app.add_option("--sex-column", f.sex_column, "Sex column, coded 0/1 (default sex)");
  app.add_option("--covariate", f.covariates, "Extra numeric column modelled as a linear covariate");
  app.add_option("--n-basis", f.n_basis, "B-spline basis size for the age smooth");
  app.add_option("--degree", f.degree, "B-spline degree");
  app.add_option("--penalty-order", f.penalty_order, "Difference penalty order");
}

void add_families(CLI::App& app, Flags& f) {
  app.add_option("--q", f.q, "FDR level in (0, 1), default 0.05");
  app.add_option("--family-rule", f.family_rule, "prefix | single | file");
  app.add_option("--family-file", f.family_file, "CSV with feature,family columns");
}

RunConfig build_config(const std::string& command, const Flags& f) {
  RunConfig c;
  c.command = command;
  if (f.config) apply_config_file(c, *f.config);

  auto set = [](auto& target, const auto& value) {
    if (value) target = *value;
  };
  set(c.in, f.in);
  set(c.out, f.out);
  set(c.model, f.model);
  set(c.pre, f.pre);
  set(c.post, f.post);
  set(c.apply_model, f.apply_model);
  set(c.family_file, f.family_file);
  set(c.family_rule, f.family_rule);
  set(c.schema.subject, f.subject_column);
  set(c.schema.site, f.site_column);
  set(c.schema.age, f.age_column);
  set(c.schema.sex, f.sex_column);
  if (!f.covariates.empty()) c.schema.covariates = f.covariates;
  if (f.n_basis) c.n_basis = f.n_basis;
  if (f.degree) c.degree = f.degree;
  if (f.penalty_order) c.penalty_order = f.penalty_order;
  set(c.threads, f.threads);
  set(c.q, f.q);
  if (f.age_min) c.age_min = f.age_min;
  if (f.age_max) c.age_max = f.age_max;
  set(c.synth.seed, f.seed);
  if (f.no_eb) c.eb = false;
  if (f.residualize) c.residualize = true;
  if (f.svg) c.svg = true;

  set(c.synth.n_sites, f.sites);
  set(c.synth.total_subjects, f.subjects);
  set(c.synth.n_bundles, f.bundles);
  if (!f.subjects_per_site.empty()) c.synth.subjects_per_site = f.subjects_per_site;
  if (f.trajectory) c.synth.trajectory = synth::parse_trajectory(*f.trajectory);
  set(c.synth.gamma_sd, f.gamma_sd);
  set(c.synth.noise_sd, f.noise_sd);
  set(c.synth.delta_shape, f.delta_shape);
  set(c.synth.delta_scale, f.delta_scale);
  if (f.delta_fixed) c.synth.delta_fixed = true;
  c.check();
  return c;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-site harmonization of tabular imaging features"};
  app.set_version_flag("--version", "harmon 0.1.0");
  app.require_subcommand(1);
  Flags f;

  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic multi-site cohort with ground truth");
  add_shared(*simulate, f);
  simulate->add_option("--sites", f.sites, "Number of sites (>= 2)");
  simulate->add_option("--subjects", f.subjects, "Total subjects, split evenly across sites");
  simulate->add_option("--subjects-per-site", f.subjects_per_site, "Explicit site sizes");
  simulate->add_option("--bundles", f.bundles, "Features per metric family");
  simulate->add_option("--trajectory", f.trajectory, "saturating_exp | quadratic");
  simulate->add_option("--gamma-sd", f.gamma_sd, "SD of additive site effects");
  simulate->add_option("--noise-sd", f.noise_sd, "Per-feature noise scale");
  simulate->add_option("--delta-shape", f.delta_shape, "Inverse-gamma shape of delta^2");
  simulate->add_option("--delta-scale", f.delta_scale, "Inverse-gamma scale of delta^2");
  simulate->add_flag("--delta-fixed", f.delta_fixed, "Fix delta^2 = 1");

  auto* harmonize = app.add_subcommand("harmonize", "Fit and apply the site harmonization model");
  add_shared(*harmonize, f);
  add_input(*harmonize, f);
  harmonize->add_flag("--no-eb", f.no_eb, "Use raw site estimates without empirical Bayes shrinkage");
  harmonize->add_option("--apply-model", f.apply_model, "Apply an existing model.json instead of fitting");

  auto* evaluate = app.add_subcommand("evaluate", "Test features for site differences");
  add_shared(*evaluate, f);
  add_input(*evaluate, f);
  add_families(*evaluate, f);
  evaluate->add_flag("--residualize", f.residualize, "Regress out age and sex before testing");

  auto* report = app.add_subcommand("report", "Summarize site parameters and effect sizes");
  add_shared(*report, f);
  add_families(*report, f);
  report->add_option("--model", f.model, "model.json from harmonize");
  report->add_option("--pre", f.pre, "report.json before harmonization");
  report->add_option("--post", f.post, "report.json after harmonization");
  report->add_flag("--svg", f.svg, "Also write an SVG heatmap of median effect sizes");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    CLI::App* chosen = app.get_subcommands().front();
    const RunConfig config = build_config(chosen->get_name(), f);
    if (chosen == simulate) return cmd_simulate(config, out);
    if (chosen == harmonize) return cmd_harmonize(config, out, err);
    if (chosen == evaluate) return cmd_evaluate(config, out);
    return cmd_report(config, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::Io ? 2 : 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace harmon::cli
