#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "harmon/special.hpp"
#include "harmon/stats.hpp"
#include "harmon/synth.hpp"

using namespace harmon;

namespace {

void BM_RegIncBeta(benchmark::State& state) {
  const double shape = static_cast<double>(state.range(0));
  double x = 0.01;
  for (auto _ : state) {
    benchmark::DoNotOptimize(stats::reg_inc_beta(x, shape, 2.0 * shape));
    x = x > 0.98 ? 0.01 : x + 0.0137;
  }
}
BENCHMARK(BM_RegIncBeta)->Arg(1)->Arg(10)->Arg(200);

void BM_AnovaOneway(benchmark::State& state) {
  std::mt19937_64 engine(1);
  std::normal_distribution<double> normal;
  std::vector<double> values(437);
  std::vector<int> groups(437);
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = normal(engine);
    groups[i] = static_cast<int>(i % 6);
  }
  for (auto _ : state) benchmark::DoNotOptimize(stats::anova_oneway(values, groups));
}
BENCHMARK(BM_AnovaOneway);

void BM_BhFdr(benchmark::State& state) {
  std::mt19937_64 engine(2);
  std::uniform_real_distribution<double> uniform;
  std::vector<double> p(static_cast<std::size_t>(state.range(0)));
  for (auto& v : p) v = uniform(engine);
  for (auto _ : state) benchmark::DoNotOptimize(stats::bh_fdr(p, 0.05));
}
BENCHMARK(BM_BhFdr)->Arg(67)->Arg(268)->Arg(10000);

void BM_EvaluateCohort(benchmark::State& state) {
  const auto cohort = synth::generate_cohort(synth::SynthConfig{}).first;
  stats::EvaluateOptions opt;
  opt.residualize = state.range(0) != 0;
  opt.spec = gam::default_smooth_spec(cohort.age());
  opt.threads = 1;
  for (auto _ : state) benchmark::DoNotOptimize(stats::evaluate_cohort(cohort, opt));
}
BENCHMARK(BM_EvaluateCohort)->ArgName("residualize")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
