// Serial vs OpenMP field rendering, plus the per-prism reference.
//
//   ./render_kernels --benchmark_counters_tabular=true
//
// Thread count follows OMP_NUM_THREADS.

#include <benchmark/benchmark.h>

#include <omp.h>

#include "magfield/magnetsim.hpp"
#include "magfield/magnetsim_kernels.hpp"

namespace {

using namespace magfield;
using namespace magfield::sim;

struct Scene {
  MagnetAssembly assembly;
  CornerSet corners;
  std::vector<Vec3> points;
  std::vector<Vec3> out;
};

Scene make_scene(int resolution) {
  AssemblyConfig cfg;
  cfg.height = cfg.width = resolution;
  Rng rng = stream_rng(2024, 0);
  Scene s;
  s.assembly = sample_assembly(rng, cfg);
  s.corners = aggregate_corners(s.assembly.magnets);
  s.points = sample_points(s.assembly.hole_side, resolution, resolution);
  s.out.resize(s.points.size());
  return s;
}

void set_counters(benchmark::State& state, const Scene& s) {
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * s.points.size()));
  state.counters["magnets"] = static_cast<double>(s.assembly.magnets.size());
  state.counters["corners"] = static_cast<double>(s.corners.size());
}

void BM_reference(benchmark::State& state) {
  Scene s = make_scene(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    render_points_reference(s.assembly.magnets, s.points, s.out);
    benchmark::DoNotOptimize(s.out.data());
  }
  set_counters(state, s);
}

void BM_serial(benchmark::State& state) {
  Scene s = make_scene(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    render_points_serial(s.assembly.magnets, s.corners, s.points, s.out);
    benchmark::DoNotOptimize(s.out.data());
  }
  set_counters(state, s);
}

void BM_parallel(benchmark::State& state) {
  Scene s = make_scene(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    render_points_parallel(s.assembly.magnets, s.corners, s.points, s.out);
    benchmark::DoNotOptimize(s.out.data());
  }
  set_counters(state, s);
  state.counters["threads"] = omp_get_max_threads();
}

void BM_aggregate_corners(benchmark::State& state) {
  Scene s = make_scene(64);
  for (auto _ : state) benchmark::DoNotOptimize(aggregate_corners(s.assembly.magnets));
  state.counters["magnets"] = static_cast<double>(s.assembly.magnets.size());
}

}  // namespace

BENCHMARK(BM_reference)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_serial)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_parallel)->Arg(32)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_aggregate_corners)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
