#include <benchmark/benchmark.h>

#include "icedepth/env.hpp"
#include "icedepth/modes.hpp"
#include "icedepth/rays.hpp"
#include "icedepth/signal.hpp"
#include "icedepth/warping.hpp"

using namespace icedepth;

namespace {

Environment dual_duct() {
    const ArcticProfileParams p{.surface_speed = 1435, .gradient = 0.016, .upper_gradient = 0.05, .max_depth = 4000,
                                .spacing = 25, .duct_depth = 1200, .warm_depth = 1000, .duct_excess = 47};
    return Environment(make_arctic_profile(ArcticProfileKind::DualDuct, p), Bathymetry::flat(4000), {1600, 1800, 0.5});
}

void BM_SolveModes(benchmark::State& state) {
    const auto env = dual_duct();
    const int nz = static_cast<int>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(solve_modes(env, 60.0, nz, 10));
    state.SetComplexityN(nz);
}
BENCHMARK(BM_SolveModes)->Arg(1000)->Arg(2700)->Arg(8000)->Unit(benchmark::kMillisecond)->Complexity();

void BM_TraceRay(benchmark::State& state) {
    const auto env = dual_duct();
    const RayOptions opt{.deep_turn_depth = 1000, .record_waypoints = false};
    for (auto _ : state) benchmark::DoNotOptimize(trace_ray(env, 300.0, 0.2, 105000.0, opt));
}
BENCHMARK(BM_TraceRay)->Unit(benchmark::kMicrosecond);

void BM_FindEigenrays(benchmark::State& state) {
    const auto env = dual_duct();
    const EigenrayOptions opt{.ray = {.deep_turn_depth = 1000, .record_waypoints = false}, .threads = 1};
    const auto grid = default_angle_grid();
    for (auto _ : state) benchmark::DoNotOptimize(find_eigenrays(env, 300, 342, 105000, grid, 0, opt));
}
BENCHMARK(BM_FindEigenrays)->Unit(benchmark::kMillisecond);

void BM_WarpRoundTrip(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto pulse = make_pulse(PulseKind::Impulse, 20, 100, 1000, 2.0);
    PulseSignal x{std::vector<double>(n, 0.0), 1000.0, 66.0};
    for (std::size_t i = 0; i < pulse.size() && 1000 + i < n; ++i) x.samples[1000 + i] = pulse.samples[i];
    const WarpingSpec spec{WarpFamily::Reflective, 60.0};
    for (auto _ : state) {
        const auto w = warp(x, spec);
        benchmark::DoNotOptimize(unwarp(w, spec));
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n));
}
BENCHMARK(BM_WarpRoundTrip)->Arg(8000)->Arg(40000)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
