#include <benchmark/benchmark.h>

#include "harmon/combat.hpp"
#include "harmon/synth.hpp"

using namespace harmon;

namespace {

const std::pair<CohortTable, synth::SynthGroundTruth>& paper_cohort() {
  static const auto data = synth::generate_cohort(synth::SynthConfig{});
  return data;
}

void BM_GenerateCohort(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(synth::generate_cohort(synth::SynthConfig{}));
}
BENCHMARK(BM_GenerateCohort)->Unit(benchmark::kMillisecond);

void BM_FitCombatGam(benchmark::State& state) {
  const auto& cohort = paper_cohort().first;
  const auto spec = gam::default_smooth_spec(cohort.age());
  combat::FitOptions opt;
  opt.eb_enabled = state.range(0) != 0;
  opt.standardization.threads = static_cast<int>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(combat::fit_combat_gam(cohort, spec, opt));
}
BENCHMARK(BM_FitCombatGam)
    ->ArgNames({"eb", "threads"})
    ->Args({1, 1})
    ->Args({0, 1})
    ->Args({1, 0})
    ->Unit(benchmark::kMillisecond);

void BM_ApplyHarmonization(benchmark::State& state) {
  const auto& cohort = paper_cohort().first;
  const auto model = combat::fit_combat_gam(cohort, gam::default_smooth_spec(cohort.age()));
  for (auto _ : state) benchmark::DoNotOptimize(combat::apply_harmonization(cohort, model));
}
BENCHMARK(BM_ApplyHarmonization)->Unit(benchmark::kMillisecond);

void BM_GcvProfile(benchmark::State& state) {
  const auto& cohort = paper_cohort().first;
  const auto spec = gam::default_smooth_spec(cohort.age());
  const Eigen::VectorXd y = cohort.features().col(0);
  const std::span<const double> ys(y.data(), static_cast<std::size_t>(y.size()));
  for (auto _ : state) benchmark::DoNotOptimize(gam::select_lambda_gcv(cohort.age(), ys, spec));
}
BENCHMARK(BM_GcvProfile)->Unit(benchmark::kMicrosecond);

}  // namespace
