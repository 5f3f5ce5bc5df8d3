#include <benchmark/benchmark.h>

#include <cmath>

#include "icjm/evaluate.hpp"
#include "icjm/likelihood.hpp"
#include "icjm/mcmc.hpp"
#include "icjm/predict.hpp"
#include "icjm/quadrature.hpp"
#include "icjm/schedule.hpp"
#include "icjm/simulate.hpp"

using namespace icjm;

namespace {

const SimulatedDataset& cohort() {
  static const auto sim = [] {
    SimulationConfig cfg;
    cfg.censor_min = 8.0;
    return simulate_dataset(cfg, 60, 77);
  }();
  return sim;
}

PosteriorSamples point_posterior(std::size_t n) {
  PosteriorSamples post;
  post.spec = simulation_preset_spec();
  post.draws.assign(n, simulation_preset_parameters());
  post.chain.assign(n, 0);
  return post;
}

}  // namespace

static void BM_GaussKronrod15(benchmark::State& state) {
  double a = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(GaussKronrod15::integrate([](double x) { return std::exp(-x * x); }, a, 2.0));
    a = a == 0.0 ? 1e-9 : 0.0;
  }
}
BENCHMARK(BM_GaussKronrod15);

static void BM_CumulativeHazard(benchmark::State& state) {
  const auto spec = simulation_preset_spec();
  const auto params = simulation_preset_parameters();
  const auto& truth = cohort().truth.front();
  const auto& cov = cohort().data.patients.front().covariates;
  for (auto _ : state)
    benchmark::DoNotOptimize(cumulative_hazard(Cause::Progression, 0.0, 8.0, params, truth.u, cov, spec));
}
BENCHMARK(BM_CumulativeHazard);

static void BM_PatientJointLoglik(benchmark::State& state) {
  const auto spec = simulation_preset_spec();
  const ModelBasis basis(spec);
  const auto params = simulation_preset_parameters();
  const PatientModel pm(cohort().data.patients.front(), basis);
  const auto& u = cohort().truth.front().u;
  for (auto _ : state) benchmark::DoNotOptimize(pm.loglik_joint(params, u));
}
BENCHMARK(BM_PatientJointLoglik);

static void BM_MCMCSweeps(benchmark::State& state) {
  const auto& sim = cohort();
  MCMCConfig cfg;
  cfg.n_chains = 1;
  cfg.n_iterations = static_cast<int>(state.range(0));
  cfg.n_burnin = cfg.n_iterations / 2;
  cfg.thinning = 1;
  for (auto _ : state) benchmark::DoNotOptimize(fit(sim.data, sim.config.spec, cfg).size());
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MCMCSweeps)->Arg(50)->Unit(benchmark::kMillisecond);

static void BM_SubjectEffects(benchmark::State& state) {
  const auto ctx = PredictionContext::from_record(cohort().data.patients.front(), 1.0, 2.0, 2.0);
  const auto spec = simulation_preset_spec();
  const auto params = simulation_preset_parameters();
  std::uint64_t seed = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(sample_subject_effects(ctx, params, spec, true, static_cast<int>(state.range(0)), ++seed));
}
BENCHMARK(BM_SubjectEffects)->Arg(100)->Arg(250)->Unit(benchmark::kMicrosecond);

static void BM_RiskCurve(benchmark::State& state) {
  const auto ctx = PredictionContext::from_record(cohort().data.patients.front(), 1.0, 2.0, 2.0);
  const auto post = point_posterior(static_cast<std::size_t>(state.range(0)));
  PredictConfig cfg;
  cfg.n_draws = static_cast<int>(state.range(0));
  cfg.n_mh = 100;
  cfg.warmup = 40;
  for (auto _ : state) benchmark::DoNotOptimize(predict_risk_curve(RiskKind::Full, ctx, post, cfg).mean.back());
}
BENCHMARK(BM_RiskCurve)->Arg(20)->Arg(100)->Unit(benchmark::kMillisecond);

static void BM_OptimalThreshold(benchmark::State& state) {
  const auto ctx = PredictionContext::from_record(cohort().data.patients.front(), 1.0, 1.5, 1.5);
  const auto post = point_posterior(20);
  PredictConfig cfg;
  cfg.n_draws = 20;
  cfg.n_mh = 100;
  cfg.warmup = 40;
  const auto grid = VisitGrid::regular(0.5, 10.0);
  for (auto _ : state)
    benchmark::DoNotOptimize(optimal_threshold(ctx, grid, post, cfg, default_threshold_grid(), 1.5).phi);
}
BENCHMARK(BM_OptimalThreshold)->Unit(benchmark::kMillisecond);

static void BM_AalenJohansen(benchmark::State& state) {
  const auto events = competing_events(cohort().data);
  for (auto _ : state) benchmark::DoNotOptimize(aalen_johansen(events).times.size());
}
BENCHMARK(BM_AalenJohansen);

BENCHMARK_MAIN();
