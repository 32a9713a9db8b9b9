#include "harmon/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "harmon/error.hpp"

namespace harmon {

CohortTable::CohortTable(std::vector<std::string> subject_ids, std::vector<std::string> site_labels,
                         std::vector<double> age, std::vector<int> sex, Eigen::MatrixXd features,
                         std::vector<std::string> feature_names, Eigen::MatrixXd covariates,
                         std::vector<std::string> covariate_names)
    : subject_ids_(std::move(subject_ids)),
      site_labels_(std::move(site_labels)),
      age_(std::move(age)),
      sex_(std::move(sex)),
      features_(std::move(features)),
      feature_names_(std::move(feature_names)),
      covariates_(std::move(covariates)),
      covariate_names_(std::move(covariate_names)) {
  if (covariate_names_.empty() && covariates_.size() == 0) {
    covariates_.resize(static_cast<Eigen::Index>(subject_ids_.size()), 0);
  }
}

std::vector<std::string> CohortTable::site_order() const {
  std::set<std::string> unique(site_labels_.begin(), site_labels_.end());
  return {unique.begin(), unique.end()};
}

std::vector<int> CohortTable::site_index(const std::vector<std::string>& order) const {
  std::unordered_map<std::string, int> lookup;
  for (std::size_t s = 0; s < order.size(); ++s) lookup.emplace(order[s], static_cast<int>(s));
  std::vector<int> index(site_labels_.size());
  for (std::size_t i = 0; i < site_labels_.size(); ++i) {
    auto it = lookup.find(site_labels_[i]);
    if (it == lookup.end()) {
      throw Error(ErrorCode::UnknownSite, "site '" + site_labels_[i] + "' (subject " +
                                              subject_ids_[i] + ") is not in the model");
    }
    index[i] = it->second;
  }
  return index;
}

CohortTable CohortTable::with_features(Eigen::MatrixXd features) const {
  CohortTable out = *this;
  out.features_ = std::move(features);
  return out;
}

CohortTable CohortTable::with_site_labels(std::vector<std::string> site_labels) const {
  CohortTable out = *this;
  out.site_labels_ = std::move(site_labels);
  return out;
}

CohortTable CohortTable::select_rows(std::span<const std::size_t> rows) const {
  const auto n = static_cast<Eigen::Index>(rows.size());
  std::vector<std::string> ids, sites;
  std::vector<double> ages;
  std::vector<int> sexes;
  Eigen::MatrixXd feats(n, features_.cols());
  Eigen::MatrixXd covs(n, covariates_.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto i = rows[static_cast<std::size_t>(r)];
    ids.push_back(subject_ids_[i]);
    sites.push_back(site_labels_[i]);
    ages.push_back(age_[i]);
    sexes.push_back(sex_[i]);
    feats.row(r) = features_.row(static_cast<Eigen::Index>(i));
    covs.row(r) = covariates_.row(static_cast<Eigen::Index>(i));
  }
  return {std::move(ids), std::move(sites), std::move(ages), std::move(sexes),
          std::move(feats), feature_names_, std::move(covs), covariate_names_};
}

CohortTable CohortTable::select_features(std::span<const std::size_t> columns) const {
  Eigen::MatrixXd feats(features_.rows(), static_cast<Eigen::Index>(columns.size()));
  std::vector<std::string> names;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    feats.col(static_cast<Eigen::Index>(c)) = features_.col(static_cast<Eigen::Index>(columns[c]));
    names.push_back(feature_names_[columns[c]]);
  }
  CohortTable out = *this;
  out.features_ = std::move(feats);
  out.feature_names_ = std::move(names);
  return out;
}

bool operator==(const CohortTable& a, const CohortTable& b) {
  return a.subject_ids_ == b.subject_ids_ && a.site_labels_ == b.site_labels_ &&
         a.age_ == b.age_ && a.sex_ == b.sex_ && a.feature_names_ == b.feature_names_ &&
         a.covariate_names_ == b.covariate_names_ &&
         a.features_.rows() == b.features_.rows() && a.features_.cols() == b.features_.cols() &&
         a.features_ == b.features_ && a.covariates_.rows() == b.covariates_.rows() &&
         a.covariates_.cols() == b.covariates_.cols() && a.covariates_ == b.covariates_;
}

std::string_view to_string(ViolationKind kind) noexcept {
  switch (kind) {
    case ViolationKind::LengthMismatch: return "LengthMismatch";
    case ViolationKind::DuplicateSubjectId: return "DuplicateSubjectId";
    case ViolationKind::DuplicateFeatureName: return "DuplicateFeatureName";
    case ViolationKind::SiteTooSmall: return "SiteTooSmall";
    case ViolationKind::NonFinite: return "NonFinite";
    case ViolationKind::NegativeAge: return "NegativeAge";
    case ViolationKind::InvalidSex: return "InvalidSex";
    case ViolationKind::ZeroVariance: return "ZeroVariance";
    case ViolationKind::Empty: return "Empty";
  }
  return "Unknown";
}

std::string Violation::to_string() const {
  std::string out(harmon::to_string(kind));
  out += "(\"" + subject + "\"";
  // feature-level violations are identified by the column name alone
  if (index >= 0 && kind != ViolationKind::ZeroVariance) out += ", " + std::to_string(index);
  out += ")";
  return out;
}

std::vector<Violation> validate(const CohortTable& cohort) {
  std::vector<Violation> out;
  const std::size_t n = cohort.n_subjects();
  if (n == 0 || cohort.n_features() == 0) {
    out.push_back({ViolationKind::Empty, n == 0 ? "subjects" : "features"});
  }

  const auto rows = static_cast<std::size_t>(cohort.features().rows());
  const auto cols = static_cast<std::size_t>(cohort.features().cols());
  const auto cov_rows = static_cast<std::size_t>(cohort.covariates().rows());
  const auto cov_cols = static_cast<std::size_t>(cohort.covariates().cols());
  if (cohort.site_labels().size() != n) out.push_back({ViolationKind::LengthMismatch, "site"});
  if (cohort.age().size() != n) out.push_back({ViolationKind::LengthMismatch, "age"});
  if (cohort.sex().size() != n) out.push_back({ViolationKind::LengthMismatch, "sex"});
  if (rows != n) out.push_back({ViolationKind::LengthMismatch, "features"});
  if (cols != cohort.n_features()) out.push_back({ViolationKind::LengthMismatch, "feature_names"});
  if (cov_rows != n || cov_cols != cohort.n_covariates()) {
    out.push_back({ViolationKind::LengthMismatch, "covariates"});
  }
  // Later checks index per-subject arrays; stop if they cannot be trusted.
  if (!out.empty()) return out;

  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < n; ++i) {
    if (!seen.insert(cohort.subject_ids()[i]).second) {
      out.push_back({ViolationKind::DuplicateSubjectId, cohort.subject_ids()[i],
                     static_cast<std::ptrdiff_t>(i)});
    }
  }
  std::unordered_set<std::string> names;
  for (std::size_t f = 0; f < cohort.n_features(); ++f) {
    if (!names.insert(cohort.feature_names()[f]).second) {
      out.push_back({ViolationKind::DuplicateFeatureName, cohort.feature_names()[f],
                     static_cast<std::ptrdiff_t>(f)});
    }
  }

  std::map<std::string, std::size_t> site_counts;
  for (const auto& label : cohort.site_labels()) ++site_counts[label];
  for (const auto& [label, count] : site_counts) {
    if (count < kMinSiteSize) out.push_back({ViolationKind::SiteTooSmall, label});
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double a = cohort.age()[i];
    if (!std::isfinite(a)) {
      out.push_back({ViolationKind::NonFinite, "age", static_cast<std::ptrdiff_t>(i)});
    } else if (a < 0.0) {
      out.push_back({ViolationKind::NegativeAge, cohort.subject_ids()[i],
                     static_cast<std::ptrdiff_t>(i)});
    }
    if (cohort.sex()[i] != 0 && cohort.sex()[i] != 1) {
      out.push_back({ViolationKind::InvalidSex, cohort.subject_ids()[i],
                     static_cast<std::ptrdiff_t>(i)});
    }
  }
  for (std::size_t c = 0; c < cohort.n_covariates(); ++c) {
    const auto col = cohort.covariates().col(static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      if (!std::isfinite(col(i))) out.push_back({ViolationKind::NonFinite, cohort.covariate_names()[c], i});
    }
  }

  for (std::size_t f = 0; f < cohort.n_features(); ++f) {
    const auto col = cohort.features().col(static_cast<Eigen::Index>(f));
    bool finite = true;
    for (Eigen::Index i = 0; i < col.size(); ++i) {
      if (!std::isfinite(col(i))) {
        out.push_back({ViolationKind::NonFinite, cohort.feature_names()[f], i});
        finite = false;
      }
    }
    if (!finite || col.size() < 2) continue;
    const double mean = col.mean();
    const double ss = (col.array() - mean).square().sum();
    if (!(ss > 0.0)) {
      out.push_back({ViolationKind::ZeroVariance, cohort.feature_names()[f], static_cast<std::ptrdiff_t>(f)});
    }
  }
  return out;
}

void require_valid(const CohortTable& cohort) {
  const auto violations = validate(cohort);
  if (violations.empty()) return;
  std::string msg = std::to_string(violations.size()) + " violation(s):";
  for (const auto& v : violations) msg += " " + v.to_string();
  throw Error(ErrorCode::InvalidCohort, msg);
}

CohortTable filter_age(const CohortTable& cohort, const AgeFilter& filter) {
  if (!(filter.min_age <= filter.max_age)) {
    throw Error(ErrorCode::InvalidConfig, "age filter requires min_age <= max_age");
  }
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < cohort.n_subjects(); ++i) {
    const double a = cohort.age()[i];
    if (a >= filter.min_age && a <= filter.max_age) keep.push_back(i);
  }
  if (keep.empty()) {
    throw Error(ErrorCode::EmptyResult, "no subjects with age in [" + format_double(filter.min_age) +
                                            ", " + format_double(filter.max_age) + "]");
  }
  CohortTable out = cohort.select_rows(keep);
  std::map<std::string, std::size_t> counts;
  for (const auto& label : out.site_labels()) ++counts[label];
  for (const auto& [label, count] : counts) {
    if (count < kMinSiteSize) {
      throw Error(ErrorCode::SiteTooSmall, "site '" + label + "' keeps " + std::to_string(count) +
                                               " subject(s) after age filtering; need at least " +
                                               std::to_string(kMinSiteSize));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back(trim(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  cells.emplace_back(trim(cell));
  return cells;
}

bool is_missing_token(std::string_view s) {
  return s.empty() || s == "NA" || s == "na" || s == "N/A";
}

double parse_number(std::string_view text, std::size_t line, std::string_view column) {
  auto where = [&] { return "row " + std::to_string(line) + ", column '" + std::string(column) + "'"; };
  if (is_missing_token(text)) {
    throw Error(ErrorCode::NonFiniteValue, "missing value at " + where());
  }
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (!text.empty() && text.front() == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw Error(ErrorCode::NonNumericCell, "'" + std::string(text) + "' at " + where());
  }
  if (!std::isfinite(value)) {
    throw Error(ErrorCode::NonFiniteValue, "'" + std::string(text) + "' at " + where());
  }
  return value;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string format_double(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

CohortTable parse_cohort_csv_text(std::string_view text, const CsvSchema& schema) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  // Line numbers reported to users are 1-based file lines.
  std::size_t header_line = 0;
  while (header_line < lines.size() && trim(lines[header_line]).empty()) ++header_line;
  if (header_line == lines.size()) throw Error(ErrorCode::ParseError, "empty CSV, no header row");

  std::string_view header_text = lines[header_line];
  if (header_text.starts_with("\xEF\xBB\xBF")) header_text.remove_prefix(3);
  const auto header = split_csv_line(header_text);

  std::unordered_map<std::string, std::size_t> col_of;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!col_of.emplace(header[c], c).second) {
      throw Error(ErrorCode::ParseError, "duplicate column '" + header[c] + "'");
    }
  }
  auto require = [&](const std::string& name) {
    auto it = col_of.find(name);
    if (it == col_of.end()) throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found");
    return it->second;
  };
  const std::size_t subject_col = require(schema.subject);
  const std::size_t site_col = require(schema.site);
  const std::size_t age_col = require(schema.age);
  const std::size_t sex_col = require(schema.sex);
  std::vector<std::size_t> cov_cols;
  for (const auto& name : schema.covariates) cov_cols.push_back(require(name));

  std::vector<bool> reserved(header.size(), false);
  reserved[subject_col] = reserved[site_col] = reserved[age_col] = reserved[sex_col] = true;
  for (auto c : cov_cols) reserved[c] = true;
  std::vector<std::size_t> feature_cols;
  std::vector<std::string> feature_names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!reserved[c]) {
      feature_cols.push_back(c);
      feature_names.push_back(header[c]);
    }
  }

  std::vector<std::string> ids, sites;
  std::vector<double> ages;
  std::vector<int> sexes;
  std::vector<std::vector<double>> feature_rows, cov_rows;
  std::unordered_set<std::string> seen_ids;

  for (std::size_t l = header_line + 1; l < lines.size(); ++l) {
    if (trim(lines[l]).empty()) continue;
    const std::size_t line_no = l + 1;
    const auto cells = split_csv_line(lines[l]);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::ParseError, "row " + std::to_string(line_no) + " has " +
                                             std::to_string(cells.size()) + " cells, header has " +
                                             std::to_string(header.size()));
    }
    const std::string& id = cells[subject_col];
    if (id.empty()) throw Error(ErrorCode::NonFiniteValue, "missing subject id at row " + std::to_string(line_no));
    if (!seen_ids.insert(id).second) {
      throw Error(ErrorCode::DuplicateSubjectId, "'" + id + "' repeated at row " + std::to_string(line_no));
    }
    if (cells[site_col].empty()) {
      throw Error(ErrorCode::NonFiniteValue, "missing site at row " + std::to_string(line_no));
    }
    const double age = parse_number(cells[age_col], line_no, schema.age);
    if (age < 0.0) {
      throw Error(ErrorCode::InvalidValue, "negative age at row " + std::to_string(line_no));
    }
    const double sex = parse_number(cells[sex_col], line_no, schema.sex);
    if (sex != 0.0 && sex != 1.0) {
      throw Error(ErrorCode::InvalidValue, "sex must be 0 or 1, got '" + cells[sex_col] + "' at row " +
                                               std::to_string(line_no));
    }
    ids.push_back(id);
    sites.push_back(cells[site_col]);
    ages.push_back(age);
    sexes.push_back(static_cast<int>(sex));
    std::vector<double> covs;
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      covs.push_back(parse_number(cells[cov_cols[k]], line_no, schema.covariates[k]));
    }
    cov_rows.push_back(std::move(covs));
    std::vector<double> feats;
    feats.reserve(feature_cols.size());
    for (std::size_t k = 0; k < feature_cols.size(); ++k) {
      feats.push_back(parse_number(cells[feature_cols[k]], line_no, feature_names[k]));
    }
    feature_rows.push_back(std::move(feats));
  }

  const auto n = static_cast<Eigen::Index>(ids.size());
  Eigen::MatrixXd features(n, static_cast<Eigen::Index>(feature_cols.size()));
  Eigen::MatrixXd covariates(n, static_cast<Eigen::Index>(cov_cols.size()));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index f = 0; f < features.cols(); ++f) features(i, f) = feature_rows[i][f];
    for (Eigen::Index c = 0; c < covariates.cols(); ++c) covariates(i, c) = cov_rows[i][c];
  }
  CohortTable cohort(std::move(ids), std::move(sites), std::move(ages), std::move(sexes),
                     std::move(features), std::move(feature_names), std::move(covariates),
                     schema.covariates);
  require_valid(cohort);
  return cohort;
}

CohortTable parse_cohort_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_cohort_csv_text(buffer.str(), schema);
}

std::string write_cohort_csv_text(const CohortTable& cohort, const CsvSchema& schema) {
  std::string out;
  out += csv_escape(schema.subject) + "," + csv_escape(schema.site) + "," + csv_escape(schema.age) +
         "," + csv_escape(schema.sex);
  for (const auto& name : cohort.covariate_names()) out += "," + csv_escape(name);
  for (const auto& name : cohort.feature_names()) out += "," + csv_escape(name);
  out += "\n";
  for (std::size_t i = 0; i < cohort.n_subjects(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out += csv_escape(cohort.subject_ids()[i]) + "," + csv_escape(cohort.site_labels()[i]) + "," +
           format_double(cohort.age()[i]) + "," + std::to_string(cohort.sex()[i]);
    for (Eigen::Index c = 0; c < cohort.covariates().cols(); ++c) {
      out += "," + format_double(cohort.covariates()(r, c));
    }
    for (Eigen::Index f = 0; f < cohort.features().cols(); ++f) {
      out += "," + format_double(cohort.features()(r, f));
    }
    out += "\n";
  }
  return out;
}

void write_cohort_csv(const CohortTable& cohort, const std::filesystem::path& path,
                      const CsvSchema& schema) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out << write_cohort_csv_text(cohort, schema);
  if (!out) throw Error(ErrorCode::Io, "write failed for '" + path.string() + "'");
}

}  // namespace harmon
