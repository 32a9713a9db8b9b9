#include <fstream>
#include <sstream>

#include <json.hpp>

#include "harmon/combat.hpp"
#include "harmon/error.hpp"

namespace harmon::combat {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json vec_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json mat_json(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(vec_json(m.row(r).transpose()));
  return out;
}

Eigen::VectorXd json_vec(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j.at(i).get<double>();
  return v;
}

Eigen::MatrixXd json_mat(const json& j, Eigen::Index cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto row = json_vec(j.at(r));
    if (row.size() != cols) throw Error(ErrorCode::ParseError, "ragged matrix in model file");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

json spec_json(const gam::SmoothSpec& spec) {
  return {{"degree", spec.degree},
          {"n_basis", spec.n_basis},
          {"penalty_order", spec.penalty_order},
          {"lambda_grid", spec.lambda_grid}};
}

gam::SmoothSpec json_spec(const json& j) {
  gam::SmoothSpec spec;
  spec.degree = j.at("degree").get<int>();
  spec.n_basis = j.at("n_basis").get<int>();
  spec.penalty_order = j.at("penalty_order").get<int>();
  spec.lambda_grid = j.at("lambda_grid").get<std::vector<double>>();
  return spec;
}

}  // namespace

std::string serialize_model(const HarmonizationModel& model) {
  const auto& sm = model.standardization;
  json smooths = json::array();
  for (const auto& s : sm.age_smooth) {
    smooths.push_back({{"knots", s.knots},
                       {"coefficients", vec_json(s.coefficients)},
                       {"lambda", s.lambda},
                       {"edf", s.edf}});
  }
  std::vector<bool> available(model.eb.available.begin(), model.eb.available.end());
  json doc = {
      {"format", "harmon-model"},
      {"version", kFormatVersion},
      {"fingerprint", model.fingerprint},
      {"spec", spec_json(model.spec)},
      {"options",
       {{"eb_enabled", model.options.eb_enabled},
        {"eb_tol", model.options.eb.tol},
        {"eb_max_iter", model.options.eb.max_iter},
        {"use_smooth", sm.options.use_smooth},
        {"use_sex", sm.options.use_sex},
        {"use_covariates", sm.options.use_covariates}}},
      {"feature_names", sm.feature_names},
      {"covariate_names", sm.covariate_names},
      {"site_order", sm.site_order},
      {"site_weights", sm.site_weights},
      {"alpha", vec_json(sm.alpha)},
      {"sigma", vec_json(sm.sigma)},
      {"beta_sex", vec_json(sm.beta_sex)},
      {"beta_extra", mat_json(sm.beta_extra)},
      {"smooth", smooths},
      {"site_offsets", mat_json(sm.site_offsets)},
      {"gamma_hat", mat_json(model.site_params.gamma_hat)},
      {"delta2_hat", mat_json(model.site_params.delta2_hat)},
      {"gamma_star", mat_json(model.site_params.gamma_star)},
      {"delta2_star", mat_json(model.site_params.delta2_star)},
      {"eb",
       {{"gamma_bar", vec_json(model.eb.gamma_bar)},
        {"tau2_bar", vec_json(model.eb.tau2_bar)},
        {"lambda_bar", vec_json(model.eb.lambda_bar)},
        {"theta_bar", vec_json(model.eb.theta_bar)},
        {"available", available},
        {"unavailable_reason", model.eb.unavailable_reason}}},
      {"warnings", model.warnings},
  };
  return doc.dump(2) + "\n";
}

HarmonizationModel parse_model(std::string_view json_text) {
  try {
    const json doc = json::parse(json_text);
    if (doc.at("format").get<std::string>() != "harmon-model") {
      throw Error(ErrorCode::ParseError, "not a harmon model file");
    }
    if (doc.at("version").get<int>() != kFormatVersion) {
      throw Error(ErrorCode::ParseError, "unsupported model file version");
    }
    HarmonizationModel model;
    model.fingerprint = doc.at("fingerprint").get<std::string>();
    model.spec = json_spec(doc.at("spec"));
    const auto& opts = doc.at("options");
    model.options.eb_enabled = opts.at("eb_enabled").get<bool>();
    model.options.eb.tol = opts.at("eb_tol").get<double>();
    model.options.eb.max_iter = opts.at("eb_max_iter").get<int>();
    auto& sm = model.standardization;
    sm.options.use_smooth = opts.at("use_smooth").get<bool>();
    sm.options.use_sex = opts.at("use_sex").get<bool>();
    sm.options.use_covariates = opts.at("use_covariates").get<bool>();
    model.options.standardization = sm.options;

    sm.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
    sm.covariate_names = doc.at("covariate_names").get<std::vector<std::string>>();
    sm.site_order = doc.at("site_order").get<std::vector<std::string>>();
    sm.site_weights = doc.at("site_weights").get<std::vector<double>>();
    const auto n_feat = static_cast<Eigen::Index>(sm.feature_names.size());
    const auto n_sites = static_cast<Eigen::Index>(sm.site_order.size());
    sm.alpha = json_vec(doc.at("alpha"));
    sm.sigma = json_vec(doc.at("sigma"));
    sm.beta_sex = json_vec(doc.at("beta_sex"));
    sm.beta_extra = json_mat(doc.at("beta_extra"), n_feat);
    sm.site_offsets = json_mat(doc.at("site_offsets"), n_feat);
    for (const auto& s : doc.at("smooth")) {
      gam::SmoothFit fit;
      fit.spec = model.spec;
      fit.knots = s.at("knots").get<std::vector<double>>();
      fit.coefficients = json_vec(s.at("coefficients"));
      fit.lambda = s.at("lambda").get<double>();
      fit.edf = s.at("edf").get<double>();
      sm.age_smooth.push_back(std::move(fit));
    }
    model.site_params.gamma_hat = json_mat(doc.at("gamma_hat"), n_feat);
    model.site_params.delta2_hat = json_mat(doc.at("delta2_hat"), n_feat);
    model.site_params.gamma_star = json_mat(doc.at("gamma_star"), n_feat);
    model.site_params.delta2_star = json_mat(doc.at("delta2_star"), n_feat);
    const auto& eb = doc.at("eb");
    model.eb.gamma_bar = json_vec(eb.at("gamma_bar"));
    model.eb.tau2_bar = json_vec(eb.at("tau2_bar"));
    model.eb.lambda_bar = json_vec(eb.at("lambda_bar"));
    model.eb.theta_bar = json_vec(eb.at("theta_bar"));
    model.eb.available = eb.at("available").get<std::vector<bool>>();
    model.eb.unavailable_reason = eb.at("unavailable_reason").get<std::vector<std::string>>();
    model.warnings = doc.at("warnings").get<std::vector<std::string>>();

    const bool shapes_ok =
        sm.alpha.size() == n_feat && sm.sigma.size() == n_feat && sm.beta_sex.size() == n_feat &&
        sm.beta_extra.rows() == static_cast<Eigen::Index>(sm.covariate_names.size()) &&
        sm.site_offsets.rows() == n_sites && model.site_params.gamma_star.rows() == n_sites &&
        model.site_params.delta2_star.rows() == n_sites &&
        static_cast<Eigen::Index>(sm.site_weights.size()) == n_sites &&
        (!sm.options.use_smooth || static_cast<Eigen::Index>(sm.age_smooth.size()) == n_feat);
    if (!shapes_ok) throw Error(ErrorCode::ParseError, "model file arrays have inconsistent sizes");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("model file: ") + e.what());
  }
}

void write_model(const HarmonizationModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << serialize_model(model);
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path.string() + "'");
}

HarmonizationModel read_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_model(buf.str());
}

}  // namespace harmon::combat
