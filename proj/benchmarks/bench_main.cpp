#include <benchmark/benchmark.h>

#include "gmmlab/denoiser.hpp"
#include "gmmlab/gmm_kernel.hpp"
#include "gmmlab/metrics.hpp"
#include "gmmlab/samplers.hpp"

using namespace gmmlab;

static void BM_ExactEpsilon(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  const Schedule sched = Schedule::linear(1000, 0.0015, 0.0195);
  const ExactDenoiser den(ring8(dim), sched);
  RngStream rng(1);
  const Vec x = rng.normal_vector(dim);
  for (auto _ : state) benchmark::DoNotOptimize(den.epsilon(x, 500));
}
BENCHMARK(BM_ExactEpsilon)->Arg(2)->Arg(10);

static void BM_KernelConstruction(benchmark::State& state) {
  const auto scheme = static_cast<KernelScheme>(state.range(0));
  RngStream rng(2);
  for (auto _ : state) benchmark::DoNotOptimize(make_kernel(scheme, 10, 8, uniform_priors(8), 1.0, rng));
}
BENCHMARK(BM_KernelConstruction)
    ->Arg(static_cast<int>(KernelScheme::rand))
    ->Arg(static_cast<int>(KernelScheme::ortho))
    ->Arg(static_cast<int>(KernelScheme::ortho_vub));

static void BM_SamplerRing8(benchmark::State& state) {
  const Schedule sched = Schedule::linear(1000, 0.0015, 0.0195);
  const ExactDenoiser den(ring8(10), sched);
  SamplerConfig cfg;
  cfg.kind = state.range(0) == 0 ? SamplerKind::ddim : SamplerKind::ddim_gmm;
  cfg.eta = 1.0;
  cfg.steps = 10;
  if (cfg.kind == SamplerKind::ddim_gmm) {
    KernelBankSpec spec;
    spec.dimension = 10;
    RngStream rng(3);
    cfg.kernel_bank = std::make_shared<const KernelBank>(build_kernel_bank(spec, 10, rng));
  }
  for (auto _ : state) benchmark::DoNotOptimize(run_sampler(cfg, den, sched, 256, 9).finals);
  state.SetItemsProcessed(state.iterations() * 256);
}
BENCHMARK(BM_SamplerRing8)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_Mmd(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  RngStream rng(4);
  const Batch x = ring8().sample(n, rng);
  const Batch y = ring8().sample(n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(mmd_squared(x, y));
}
BENCHMARK(BM_Mmd)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

static void BM_SlicedW2(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  RngStream rng(5);
  const Batch x = ring8().sample(n, rng);
  const Batch y = ring8().sample(n, rng);
  for (auto _ : state) {
    RngStream proj(6);
    benchmark::DoNotOptimize(sliced_wasserstein2(x, y, 128, proj));
  }
}
BENCHMARK(BM_SlicedW2)->Arg(2000)->Arg(10000)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
