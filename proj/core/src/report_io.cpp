#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "harmon/error.hpp"
#include "harmon/stats.hpp"

namespace harmon::stats {

namespace {

using nlohmann::json;

constexpr int kReportVersion = 1;

// JSON has no infinity; infinite statistics are written as null.
json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double null_as_inf(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

EffectBin parse_bin(const std::string& s) {
  if (s == "small") return EffectBin::Small;
  if (s == "medium") return EffectBin::Medium;
  if (s == "large") return EffectBin::Large;
  throw Error(ErrorCode::ParseError, "unknown effect-size bin '" + s + "'");
}

std::string flags_of(const FeatureResult& fr) {
  if (fr.anova.degenerate) return "degenerate";
  if (fr.anova.zero_within_variance) return "zero_within_variance";
  return "";
}

}  // namespace

std::string report_to_json(const EvaluationReport& report) {
  json features = json::array();
  for (const auto& fr : report.features) {
    features.push_back({{"feature", fr.anova.feature},
                        {"family", fr.family},
                        {"f_statistic", finite_or_null(fr.anova.f_statistic)},
                        {"df_between", fr.anova.df_between},
                        {"df_within", fr.anova.df_within},
                        {"p_value", fr.anova.p_value},
                        {"p_adjusted", fr.p_adjusted},
                        {"rejected", fr.rejected},
                        {"ss_between", fr.anova.ss_between},
                        {"ss_within", fr.anova.ss_within},
                        {"eta_squared", fr.anova.eta_squared},
                        {"cohens_f", finite_or_null(fr.effect.f)},
                        {"bin", std::string(to_string(fr.effect.bin))},
                        {"zero_within_variance", fr.anova.zero_within_variance},
                        {"degenerate", fr.anova.degenerate}});
  }
  json families = json::array();
  for (const auto& fam : report.families) {
    families.push_back({{"family", fam.family},
                        {"tests", fam.tests},
                        {"rejections", fam.rejections},
                        {"median_cohens_f", finite_or_null(fam.median_f)}});
  }
  json doc = {
      {"format", "harmon-report"},
      {"version", kReportVersion},
      {"metadata",
       {{"family_rule", report.family_rule},
        {"q", report.q},
        {"fdr_method", "benjamini-hochberg"},
        {"n_subjects", report.n_subjects},
        {"n_sites", report.n_sites},
        {"residualized", report.residualized},
        {"effect_bins", {{"small_max", kSmallEffectMax}, {"medium_max", kMediumEffectMax}}},
        {"cohen_anchors", {{"small", kCohenSmall}, {"medium", kCohenMedium}, {"large", kCohenLarge}}}}},
      {"summary",
       {{"tests", report.features.size()},
        {"rejections", report.rejections},
        {"flagged", report.flagged},
        {"bins",
         {{"small", report.bins.small},
          {"medium", report.bins.medium},
          {"large", report.bins.large},
          {"small_pct", report.bins.percent(EffectBin::Small)},
          {"medium_pct", report.bins.percent(EffectBin::Medium)},
          {"large_pct", report.bins.percent(EffectBin::Large)}}}}},
      {"families", families},
      {"features", features},
  };
  return doc.dump(2) + "\n";
}

EvaluationReport report_from_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    if (doc.at("format").get<std::string>() != "harmon-report" ||
        doc.at("version").get<int>() != kReportVersion) {
      throw Error(ErrorCode::ParseError, "not a supported harmon report file");
    }
    EvaluationReport r;
    const auto& meta = doc.at("metadata");
    r.family_rule = meta.at("family_rule").get<std::string>();
    r.q = meta.at("q").get<double>();
    r.n_subjects = meta.at("n_subjects").get<std::size_t>();
    r.n_sites = meta.at("n_sites").get<std::size_t>();
    r.residualized = meta.at("residualized").get<bool>();
    const auto& summary = doc.at("summary");
    r.rejections = summary.at("rejections").get<std::size_t>();
    r.flagged = summary.at("flagged").get<std::size_t>();
    r.bins.small = summary.at("bins").at("small").get<std::size_t>();
    r.bins.medium = summary.at("bins").at("medium").get<std::size_t>();
    r.bins.large = summary.at("bins").at("large").get<std::size_t>();
    for (const auto& fam : doc.at("families")) {
      r.families.push_back({fam.at("family").get<std::string>(), fam.at("tests").get<std::size_t>(),
                            fam.at("rejections").get<std::size_t>(), null_as_inf(fam.at("median_cohens_f"))});
    }
    for (const auto& j : doc.at("features")) {
      FeatureResult fr;
      fr.anova.feature = j.at("feature").get<std::string>();
      fr.family = j.at("family").get<std::string>();
      fr.anova.f_statistic = null_as_inf(j.at("f_statistic"));
      fr.anova.df_between = j.at("df_between").get<int>();
      fr.anova.df_within = j.at("df_within").get<int>();
      fr.anova.p_value = j.at("p_value").get<double>();
      fr.p_adjusted = j.at("p_adjusted").get<double>();
      fr.rejected = j.at("rejected").get<bool>();
      fr.anova.ss_between = j.at("ss_between").get<double>();
      fr.anova.ss_within = j.at("ss_within").get<double>();
      fr.anova.eta_squared = j.at("eta_squared").get<double>();
      fr.anova.zero_within_variance = j.at("zero_within_variance").get<bool>();
      fr.anova.degenerate = j.at("degenerate").get<bool>();
      fr.effect.feature = fr.anova.feature;
      fr.effect.f = null_as_inf(j.at("cohens_f"));
      fr.effect.eta_squared = fr.anova.eta_squared;
      fr.effect.infinite = fr.anova.zero_within_variance;
      fr.effect.bin = parse_bin(j.at("bin").get<std::string>());
      r.features.push_back(std::move(fr));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("report file: ") + e.what());
  }
}

std::string report_to_csv(const EvaluationReport& report) {
  std::string out =
      "feature,family,f_statistic,df_between,df_within,p_value,p_adjusted,rejected,eta_squared,cohens_f,bin,flags\n";
  for (const auto& fr : report.features) {
    out += fr.anova.feature + "," + fr.family + "," + format_double(fr.anova.f_statistic) + "," +
           std::to_string(fr.anova.df_between) + "," + std::to_string(fr.anova.df_within) + "," +
           format_double(fr.anova.p_value) + "," + format_double(fr.p_adjusted) + "," +
           (fr.rejected ? "1" : "0") + "," + format_double(fr.anova.eta_squared) + "," +
           format_double(fr.effect.f) + "," + std::string(to_string(fr.effect.bin)) + "," + flags_of(fr) + "\n";
  }
  return out;
}

void write_report(const EvaluationReport& report, const std::filesystem::path& json_path,
                  const std::filesystem::path& csv_path) {
  auto write = [](const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw Error(ErrorCode::Io, "write failed for '" + path.string() + "'");
  };
  write(json_path, report_to_json(report));
  write(csv_path, report_to_csv(report));
}

EvaluationReport read_report(const std::filesystem::path& json_path) {
  std::ifstream in(json_path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + json_path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return report_from_json(buf.str());
}

}  // namespace harmon::stats
