// SPDX-License-Identifier: Apache-2.0
// Serial reference loops vs the OpenMP kernels. Run with DENSCAL_THREADS=N to
// cap the parallel side.
#include <benchmark/benchmark.h>

#include "denscal/harness.hpp"

using namespace denscal;

namespace {

Execution exec_of(const benchmark::State& s) { return s.range(0) ? Execution::Parallel : Execution::Serial; }

const GeneratedSite& site() {
  static const GeneratedSite s = [] {
    GenConfig g;
    g.feature_dim = 64;
    g.n_patients = 2000;
    g.seed = 1;
    return generate_site(g, SiteProfile::site2_sm(), {});
  }();
  return s;
}

void BM_GenerateSite(benchmark::State& state) {
  GenConfig g;
  g.feature_dim = 128;
  g.n_patients = 1000;
  for (auto _ : state) benchmark::DoNotOptimize(generate_site(g, SiteProfile::site1_ffdm(), {}, exec_of(state)));
}

void BM_PredictExams(benchmark::State& state) {
  Predictor p{site().truth.base_head, CalibrationParams{}};
  for (auto _ : state) benchmark::DoNotOptimize(predict_exams(p, site().dataset, exec_of(state)));
}

void BM_BootstrapEvaluation(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(run_evaluation(Predictor::base(), site().dataset, 2000, 3, exec_of(state)));
}

void BM_Sweep(benchmark::State& state) {
  auto split = split_by_patient(site().dataset, SplitRatios{0.6, 0.1, 0.3}, 2);
  SweepConfig cfg;
  cfg.sizes = {50, 200};
  cfg.realizations = 4;
  cfg.adaptation.finetune.epochs = 10;
  for (auto _ : state) benchmark::DoNotOptimize(run_sweep(cfg, split.train, split.val, split.test, exec_of(state)));
}

}  // namespace

BENCHMARK(BM_GenerateSite)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_PredictExams)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_BootstrapEvaluation)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Sweep)->ArgName("parallel")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
