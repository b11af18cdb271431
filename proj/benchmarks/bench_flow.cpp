#include <benchmark/benchmark.h>

#include "ktpr/flow.hpp"
#include "ktpr/phantom.hpp"

using namespace ktpr;

namespace {

const Phantom& phantom() {
  static const Phantom ph = [] {
    PhantomSpec spec;
    spec.preset = TreePreset::Chain;
    spec.parts = 2;
    spec.resolution = 32;
    return build_phantom(spec);
  }();
  return ph;
}

void BM_MvcWeights(benchmark::State& state) {
  const Phantom& ph = phantom();
  const Vec3 x = ph.tree.rest_joints[1] + Vec3(1.0, 2.0, -1.5);
  for (auto _ : state) benchmark::DoNotOptimize(mvc_weights(x, ph.mesh));
  state.counters["vertices"] = ph.mesh.vertex_count();
}
BENCHMARK(BM_MvcWeights);

void BM_IntegrateFlow(benchmark::State& state) {
  const Phantom& ph = phantom();
  Eigen::VectorXd end = Eigen::VectorXd::Zero(ph.shape.beta_dim());
  end[0] = 1.0;
  const FlowSpec spec{Eigen::VectorXd::Zero(ph.shape.beta_dim()), end, static_cast<int>(state.range(0))};
  std::vector<Vec3> points;
  for (std::size_t v = 0; v < ph.grid.voxel_count() && points.size() < 64; v += 17)
    if (ph.mask[v]) points.push_back(ph.grid.world(v));
  for (auto _ : state) benchmark::DoNotOptimize(integrate_flow(spec, ph.shape, ph.mesh, points));
}
BENCHMARK(BM_IntegrateFlow)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace
