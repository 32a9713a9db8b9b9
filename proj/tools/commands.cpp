#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "harmon/combat.hpp"
#include "harmon/error.hpp"

namespace harmon::cli {

namespace fs = std::filesystem;

namespace {

void require_file(const fs::path& path, const std::string& flag) {
  if (path.empty()) throw Error(ErrorCode::InvalidConfig, "missing required " + flag);
  if (!fs::is_regular_file(path)) {
    throw Error(ErrorCode::InvalidConfig, flag + " file not found: '" + path.string() + "'");
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw Error(ErrorCode::Io, "cannot create output directory '" + dir.string() + "'");
  }
}

void require_distinct(const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) {
  for (const auto& o : outputs) {
    for (const auto& i : inputs) {
      if (i.empty()) continue;
      std::error_code ec1, ec2;
      if (fs::weakly_canonical(i, ec1) == fs::weakly_canonical(o, ec2)) {
        throw Error(ErrorCode::InvalidConfig, "output '" + o.string() + "' would overwrite input '" + i.string() + "'");
      }
    }
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path.string() + "'");
}

CohortTable load_cohort(const RunConfig& config) {
  require_file(config.in, "--in");
  CohortTable cohort = parse_cohort_csv(config.in, config.schema);
  if (const auto filter = config.age_filter()) cohort = filter_age(cohort, *filter);
  return cohort;
}

std::string fixed(double v, int digits) {
  if (std::isinf(v)) return "inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string gamma_delta_csv(const combat::HarmonizationModel& model, const stats::FamilyRule& rule) {
  const auto& names = model.standardization.feature_names;
  std::map<std::string, std::vector<Eigen::Index>> by_family;
  for (std::size_t f = 0; f < names.size(); ++f) {
    by_family[rule.family_of(names[f])].push_back(static_cast<Eigen::Index>(f));
  }
  const auto& p = model.site_params;
  std::string out = "site,family,features,gamma_hat,gamma_star,delta_hat,delta_star\n";
  for (std::size_t s = 0; s < model.standardization.site_order.size(); ++s) {
    const auto row = static_cast<Eigen::Index>(s);
    for (const auto& [family, cols] : by_family) {
      double gh = 0.0, gs = 0.0, dh = 0.0, ds = 0.0;
      for (const auto c : cols) {
        gh += p.gamma_hat(row, c);
        gs += p.gamma_star(row, c);
        dh += std::sqrt(p.delta2_hat(row, c));
        ds += std::sqrt(p.delta2_star(row, c));
      }
      const double n = static_cast<double>(cols.size());
      out += model.standardization.site_order[s] + "," + family + "," + std::to_string(cols.size()) + "," +
             format_double(gh / n) + "," + format_double(gs / n) + "," + format_double(dh / n) + "," +
             format_double(ds / n) + "\n";
    }
  }
  return out;
}

struct MedianRow {
  std::string family;
  std::optional<double> pre;
  std::optional<double> post;
};

std::vector<MedianRow> median_rows(const std::optional<stats::EvaluationReport>& pre,
                                   const std::optional<stats::EvaluationReport>& post) {
  std::map<std::string, MedianRow> rows;
  if (pre) {
    for (const auto& fam : pre->families) rows[fam.family].pre = fam.median_f;
  }
  if (post) {
    for (const auto& fam : post->families) rows[fam.family].post = fam.median_f;
  }
  std::vector<MedianRow> out;
  for (auto& [family, row] : rows) {
    row.family = family;
    out.push_back(row);
  }
  return out;
}

std::string effect_medians_csv(const std::vector<MedianRow>& rows) {
  std::string out = "family,median_f_pre,median_f_post\n";
  for (const auto& r : rows) {
    out += r.family + "," + (r.pre ? format_double(*r.pre) : "") + "," + (r.post ? format_double(*r.post) : "") + "\n";
  }
  return out;
}

// Sequential white-to-navy ramp saturating at Cohen's large anchor.
std::string ramp(double f) {
  const double t = std::isfinite(f) ? std::clamp(f / stats::kCohenLarge, 0.0, 1.0) : 1.0;
  auto mix = [t](int a, int b) { return static_cast<int>(std::lround(a + (b - a) * t)); };
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", mix(0xf7, 0x08), mix(0xfb, 0x30), mix(0xff, 0x6b));
  return buf;
}

std::string effect_svg(const std::vector<MedianRow>& rows) {
  constexpr int cell_w = 110, cell_h = 32, label_w = 90, header_h = 30;
  const int width = label_w + 2 * cell_w + 10;
  const int height = header_h + static_cast<int>(rows.size()) * cell_h + 24;
  std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
                    std::to_string(height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg += "<text x=\"" + std::to_string(label_w + cell_w / 2) + "\" y=\"20\" text-anchor=\"middle\">pre</text>\n";
  svg += "<text x=\"" + std::to_string(label_w + cell_w + cell_w / 2) + "\" y=\"20\" text-anchor=\"middle\">post</text>\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const int y = header_h + static_cast<int>(i) * cell_h;
    svg += "<text x=\"4\" y=\"" + std::to_string(y + cell_h / 2 + 4) + "\">" + rows[i].family + "</text>\n";
    const std::optional<double> cells[2] = {rows[i].pre, rows[i].post};
    for (int c = 0; c < 2; ++c) {
      const int x = label_w + c * cell_w;
      if (!cells[c]) {
        svg += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" +
               std::to_string(cell_w) + "\" height=\"" + std::to_string(cell_h) +
               "\" fill=\"#dddddd\" stroke=\"#ffffff\"/>\n";
        continue;
      }
      const double f = *cells[c];
      const bool dark = !std::isfinite(f) || f > 0.5 * stats::kCohenLarge;
      std::string label = fixed(f, 3);
      if (stats::effect_bin(f) == stats::EffectBin::Small) label += " *";
      svg += "<rect x=\"" + std::to_string(x) + "\" y=\"" + std::to_string(y) + "\" width=\"" +
             std::to_string(cell_w) + "\" height=\"" + std::to_string(cell_h) + "\" fill=\"" + ramp(f) +
             "\" stroke=\"#ffffff\"/>\n";
      svg += "<text x=\"" + std::to_string(x + cell_w / 2) + "\" y=\"" + std::to_string(y + cell_h / 2 + 4) +
             "\" text-anchor=\"middle\" fill=\"" + (dark ? "#ffffff" : "#000000") + "\">" + label + "</text>\n";
    }
  }
  svg += "<text x=\"4\" y=\"" + std::to_string(height - 6) + "\">median Cohen's f; * small (f &lt;= 0.1)</text>\n";
  svg += "</svg>\n";
  return svg;
}

}  // namespace

int cmd_simulate(const RunConfig& config, std::ostream& out) {
  synth::SynthConfig sc = config.synth;
  if (config.age_min) sc.age_min = *config.age_min;
  if (config.age_max) sc.age_max = *config.age_max;
  auto [cohort, truth] = synth::generate_cohort(sc);

  ensure_dir(config.out);
  const fs::path cohort_path = config.out / "cohort.csv";
  const fs::path truth_path = config.out / "truth.json";
  write_cohort_csv(cohort, cohort_path);
  synth::write_truth(truth, truth_path);
  out << "simulated N=" << cohort.n_subjects() << " subjects, S=" << cohort.site_order().size()
      << " sites, F=" << cohort.n_features() << " features, seed=" << sc.seed << "\n";
  out << "wrote " << cohort_path.string() << " and " << truth_path.string() << "\n";
  return 0;
}

int cmd_harmonize(const RunConfig& config, std::ostream& out, std::ostream& err) {
  const fs::path harmonized_path = config.out / "harmonized.csv";
  const fs::path model_path = config.out / "model.json";
  require_distinct({config.in, config.apply_model}, {harmonized_path, model_path});
  if (!config.apply_model.empty()) require_file(config.apply_model, "--apply-model");

  const CohortTable cohort = load_cohort(config);
  combat::HarmonizationModel model;
  if (!config.apply_model.empty()) {
    model = combat::read_model(config.apply_model);
  } else {
    combat::FitOptions options;
    options.eb_enabled = config.eb;
    options.standardization.threads = config.threads;
    model = combat::fit_combat_gam(cohort, config.smooth_spec(cohort.age()), options);
  }
  const auto harmonized = combat::apply_harmonization(cohort, model);

  ensure_dir(config.out);
  write_cohort_csv(harmonized.cohort, harmonized_path, config.schema);
  combat::write_model(model, model_path);
  for (const auto& w : model.warnings) err << "warning: " << w << "\n";
  out << "harmonized N=" << cohort.n_subjects() << " subjects, S=" << cohort.site_order().size()
      << " sites, F=" << cohort.n_features() << " features (EB " << (model.options.eb_enabled ? "on" : "off")
      << ")";
  if (harmonized.clamped_ages > 0) out << ", " << harmonized.clamped_ages << " ages clamped to the fit range";
  out << "\nwrote " << harmonized_path.string() << " and " << model_path.string() << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& config, std::ostream& out) {
  const fs::path json_path = config.out / "report.json";
  const fs::path csv_path = config.out / "report.csv";
  require_distinct({config.in, config.family_file}, {json_path, csv_path});

  const CohortTable cohort = load_cohort(config);
  stats::EvaluateOptions options;
  options.q = config.q;
  options.families = config.families();
  options.residualize = config.residualize;
  if (config.residualize) options.spec = config.smooth_spec(cohort.age());
  options.threads = config.threads;
  const auto report = stats::evaluate_cohort(cohort, options);

  ensure_dir(config.out);
  stats::write_report(report, json_path, csv_path);
  out << stats::format_summary(report);
  return 0;
}

int cmd_report(const RunConfig& config, std::ostream& out, std::ostream& err) {
  if (config.model.empty() && config.pre.empty() && config.post.empty()) {
    throw Error(ErrorCode::InvalidConfig, "report needs at least one of --model, --pre, --post");
  }
  if (!config.model.empty()) require_file(config.model, "--model");
  if (!config.pre.empty()) require_file(config.pre, "--pre");
  if (!config.post.empty()) require_file(config.post, "--post");
  const bool have_reports = !config.pre.empty() || !config.post.empty();
  if (config.svg && !have_reports) throw Error(ErrorCode::InvalidConfig, "--svg needs --pre or --post");

  const fs::path gd_path = config.out / "gamma-delta.csv";
  const fs::path em_path = config.out / "effect-medians.csv";
  const fs::path svg_path = config.out / "effect-medians.svg";
  require_distinct({config.model, config.pre, config.post, config.family_file}, {gd_path, em_path, svg_path});

  std::string gamma_delta;
  if (!config.model.empty()) {
    gamma_delta = gamma_delta_csv(combat::read_model(config.model), config.families());
  }
  std::optional<stats::EvaluationReport> pre, post;
  if (!config.pre.empty()) pre = stats::read_report(config.pre);
  if (!config.post.empty()) post = stats::read_report(config.post);
  const auto rows = median_rows(pre, post);

  ensure_dir(config.out);
  if (!config.model.empty()) {
    write_text(gd_path, gamma_delta);
    out << "wrote " << gd_path.string() << "\n";
  }
  if (have_reports) {
    write_text(em_path, effect_medians_csv(rows));
    out << "wrote " << em_path.string() << "\n";
    for (const auto& r : rows) {
      out << "  " << r.family << ": median Cohen's f " << (r.pre ? fixed(*r.pre, 3) : "-") << " -> "
          << (r.post ? fixed(*r.post, 3) : "-") << "\n";
      if (r.pre && r.post && *r.post > *r.pre) {
        err << "warning: median effect size rose after harmonization for family " << r.family << "\n";
      }
    }
  }
  if (config.svg) {
    write_text(svg_path, effect_svg(rows));
    out << "wrote " << svg_path.string() << "\n";
  }
  return 0;
}

}  // namespace harmon::cli
