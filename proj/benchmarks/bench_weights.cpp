#include <benchmark/benchmark.h>

#include "ktpr/phantom.hpp"
#include "ktpr/weights.hpp"

using namespace ktpr;

namespace {

void BM_SolveWeights(benchmark::State& state) {
  PhantomSpec spec;
  spec.preset = TreePreset::Chain;
  spec.parts = 3;
  spec.resolution = static_cast<int>(state.range(0));
  const Phantom ph = build_phantom(spec);
  const BoundaryData bd = rasterize_boundary_weights(ph.mesh, ph.vertex_weights, ph.grid, ph.mask);
  WeightSolveReport report;
  for (auto _ : state) benchmark::DoNotOptimize(solve_weights(bd, ph.grid, ph.mask, ph.parts(), {}, &report));
  state.counters["iters"] = report.iterations;
}
BENCHMARK(BM_SolveWeights)->Arg(32)->Arg(48)->Unit(benchmark::kMillisecond);

void BM_ProjectSimplex(benchmark::State& state) {
  Eigen::VectorXd v(10);
  v << 0.3, -0.2, 0.9, 0.1, 0.05, 0.4, -0.7, 0.2, 0.0, 0.6;
  for (auto _ : state) benchmark::DoNotOptimize(project_simplex(v));
}
BENCHMARK(BM_ProjectSimplex);

}  // namespace
