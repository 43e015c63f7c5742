#include "gnmk/basis_adapt.hpp"
#include "gnmk/dynsys.hpp"
#include "gnmk/pce.hpp"

#include <benchmark/benchmark.h>

#include <algorithm>

using namespace gnmk;

namespace {

Exec mode(const benchmark::State& st) { return st.range(0) ? Exec::parallel : Exec::serial; }

void label(benchmark::State& st) { st.SetLabel(st.range(0) ? "parallel" : "serial"); }

void BM_propagate_ensemble(benchmark::State& st)
{
    const dynsys::Flow flow{dynsys::lorenz84_hours(dynsys::SystemParams{}, 120.0), dynsys::IntegratorConfig{}};
    const Mat x = pce::sample_germ(st.range(1), 3, 1);
    for (auto _ : st) benchmark::DoNotOptimize(flow.propagate(x, 0.0, 6.0, mode(st)));
    label(st);
}

void BM_design_matrix(benchmark::State& st)
{
    const auto set = pce::total_degree_index_set(6, 4);
    const Mat g = pce::sample_germ(st.range(1), 6, 2);
    for (auto _ : st) benchmark::DoNotOptimize(pce::design_matrix(pce::BasisKind::hermite(), set, g, mode(st)));
    label(st);
}

void BM_pce_eval_samples(benchmark::State& st)
{
    const auto set = pce::total_degree_index_set(6, 4);
    const pce::PCExpansion x(pce::sample_germ(3, static_cast<int>(set.size()), 3), pce::BasisKind::hermite(), set);
    const Mat g = pce::sample_germ(st.range(1), 6, 4);
    for (auto _ : st) benchmark::DoNotOptimize(pce::pce_eval_samples(x, g, mode(st)));
    label(st);
}

void BM_kde_cdf(benchmark::State& st)
{
    Vec s = pce::sample_germ(st.range(1), 1, 5).col(0);
    std::sort(s.begin(), s.end());
    const Vec pts = Vec::LinSpaced(1024, -4.0, 4.0);
    const double h = basis_adapt::silverman_bandwidth(s);
    for (auto _ : st) benchmark::DoNotOptimize(basis_adapt::kde_cdf(s, h, pts, mode(st)));
    label(st);
}

}  // namespace

BENCHMARK(BM_propagate_ensemble)->ArgsProduct({{0, 1}, {100, 1000}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_design_matrix)->ArgsProduct({{0, 1}, {1000, 10000}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_pce_eval_samples)->ArgsProduct({{0, 1}, {10000, 100000}})->Unit(benchmark::kMillisecond);
BENCHMARK(BM_kde_cdf)->ArgsProduct({{0, 1}, {10000, 100000}})->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
