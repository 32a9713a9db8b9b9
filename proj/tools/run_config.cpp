#include "run_config.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "harmon/error.hpp"

namespace harmon::cli {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); }

template <typename T>
T get_as(const json& value, const std::string& key) {
  try {
    return value.get<T>();
  } catch (const json::exception&) {
    bad("config key '" + key + "' has the wrong type");
  }
}

}  // namespace

void RunConfig::check() const {
  if (!(q > 0.0 && q < 1.0)) bad("q must lie strictly between 0 and 1");
  if (threads < 0) bad("threads must be >= 0");
  if (family_rule != "prefix" && family_rule != "single" && family_rule != "file") {
    bad("family rule must be prefix, single or file");
  }
  if (family_rule == "file" && family_file.empty()) bad("--family-rule file needs --family-file");
  if (age_min && age_max && *age_min > *age_max) bad("age-min must not exceed age-max");
}

gam::SmoothSpec RunConfig::smooth_spec(std::span<const double> ages) const {
  gam::SmoothSpec spec = gam::default_smooth_spec(ages);
  if (degree) spec.degree = *degree;
  if (n_basis) spec.n_basis = *n_basis;
  if (penalty_order) spec.penalty_order = *penalty_order;
  spec.check();
  return spec;
}

stats::FamilyRule RunConfig::families() const {
  if (family_rule == "file") return stats::read_family_file(family_file);
  stats::FamilyRule rule;
  rule.kind = family_rule == "single" ? stats::FamilyRuleKind::Single : stats::FamilyRuleKind::Prefix;
  return rule;
}

std::optional<AgeFilter> RunConfig::age_filter() const {
  if (!age_min && !age_max) return std::nullopt;
  constexpr double inf = std::numeric_limits<double>::infinity();
  return AgeFilter{age_min.value_or(-inf), age_max.value_or(inf)};
}

void apply_config_json(RunConfig& c, std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    bad(std::string("config file is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) bad("config file must hold a JSON object");

  for (const auto& [key, v] : doc.items()) {
    auto str = [&] { return get_as<std::string>(v, key); };
    auto num = [&] { return get_as<double>(v, key); };
    auto integer = [&] { return get_as<int>(v, key); };
    auto flag = [&] { return get_as<bool>(v, key); };

    if (key == "in") c.in = str();
    else if (key == "out") c.out = str();
    else if (key == "model") c.model = str();
    else if (key == "pre") c.pre = str();
    else if (key == "post") c.post = str();
    else if (key == "apply_model") c.apply_model = str();
    else if (key == "family_file") c.family_file = str();
    else if (key == "family_rule") c.family_rule = str();
    else if (key == "subject_column") c.schema.subject = str();
    else if (key == "site_column") c.schema.site = str();
    else if (key == "age_column") c.schema.age = str();
    else if (key == "sex_column") c.schema.sex = str();
    else if (key == "covariates") c.schema.covariates = get_as<std::vector<std::string>>(v, key);
    else if (key == "n_basis") c.n_basis = integer();
    else if (key == "degree") c.degree = integer();
    else if (key == "penalty_order") c.penalty_order = integer();
    else if (key == "eb") c.eb = flag();
    else if (key == "q") c.q = num();
    else if (key == "age_min") c.age_min = num();
    else if (key == "age_max") c.age_max = num();
    else if (key == "threads") c.threads = integer();
    else if (key == "residualize") c.residualize = flag();
    else if (key == "svg") c.svg = flag();
    else if (key == "seed") c.synth.seed = get_as<std::uint64_t>(v, key);
    else if (key == "sites") c.synth.n_sites = integer();
    else if (key == "subjects") c.synth.total_subjects = integer();
    else if (key == "subjects_per_site") c.synth.subjects_per_site = get_as<std::vector<int>>(v, key);
    else if (key == "bundles") c.synth.n_bundles = integer();
    else if (key == "metrics") c.synth.metrics = get_as<std::vector<std::string>>(v, key);
    else if (key == "trajectory") c.synth.trajectory = synth::parse_trajectory(str());
    else if (key == "gamma_sd") c.synth.gamma_sd = num();
    else if (key == "noise_sd") c.synth.noise_sd = num();
    else if (key == "delta_shape") c.synth.delta_shape = num();
    else if (key == "delta_scale") c.synth.delta_scale = num();
    else if (key == "delta_fixed") c.synth.delta_fixed = flag();
    else if (key == "beta_sex_min") c.synth.beta_sex_min = num();
    else if (key == "beta_sex_max") c.synth.beta_sex_max = num();
    else if (key == "amplitude_min") c.synth.amplitude_min = num();
    else if (key == "amplitude_max") c.synth.amplitude_max = num();
    else bad("unknown config key '" + key + "'");
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open config file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  apply_config_json(config, buf.str());
}

}  // namespace harmon::cli
