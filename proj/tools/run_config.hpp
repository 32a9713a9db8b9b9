#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "harmon/cohort.hpp"
#include "harmon/gam.hpp"
#include "harmon/stats.hpp"
#include "harmon/synth.hpp"

namespace harmon::cli {

/// Everything a subcommand needs. Built from defaults, then the JSON config
/// file, then explicit flags.
struct RunConfig {
  std::string command;

  std::filesystem::path in;
  std::filesystem::path out = ".";
  std::filesystem::path model;
  std::filesystem::path pre;
  std::filesystem::path post;
  std::filesystem::path apply_model;
  std::filesystem::path family_file;

  CsvSchema schema;
  std::optional<int> n_basis;
  std::optional<int> degree;
  std::optional<int> penalty_order;

  bool eb = true;
  double q = 0.05;
  std::string family_rule = "prefix";
  // Age filter for harmonize/evaluate; generated age range for simulate.
  std::optional<double> age_min;
  std::optional<double> age_max;
  int threads = 0;
  bool residualize = false;
  bool svg = false;

  synth::SynthConfig synth;

  // Throws InvalidConfig.
  void check() const;
  gam::SmoothSpec smooth_spec(std::span<const double> ages) const;
  stats::FamilyRule families() const;
  std::optional<AgeFilter> age_filter() const;
};

/// Applies a JSON config document onto `config`. Unknown keys and wrong value
/// types are InvalidConfig.
void apply_config_json(RunConfig& config, std::string_view json_text);
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

}  // namespace harmon::cli
