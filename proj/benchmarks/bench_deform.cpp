#include <benchmark/benchmark.h>

#include "ktpr/deform.hpp"
#include "ktpr/phantom.hpp"

using namespace ktpr;

namespace {

const Phantom& phantom() {
  static const Phantom ph = [] {
    PhantomSpec spec;
    spec.resolution = 48;
    return build_phantom(spec);
  }();
  return ph;
}

std::vector<RigidTransform> bent() {
  Pose p = Pose::zero(phantom().parts());
  p.theta[4] = Vec3(0, 1.2, 0);
  p.theta[5] = Vec3(0, -1.2, 0);
  p.theta[8] = Vec3(-0.8, 0, 0);
  return forward_kinematics(phantom().tree, p);
}

void BM_BlendPoint(benchmark::State& state) {
  const auto method = static_cast<DeformMethod>(state.range(0));
  const ArticulatedBlend blend(method, bent());
  const Phantom& ph = phantom();
  std::vector<std::size_t> voxels;
  for (std::size_t v = 0; v < ph.grid.voxel_count(); ++v)
    if (ph.mask[v]) voxels.push_back(v);
  std::size_t i = 0;
  for (auto _ : state) {
    const std::size_t v = voxels[i++ % voxels.size()];
    benchmark::DoNotOptimize(blend(ph.grid.world(v), ph.weights.voxel(v)));
  }
  state.SetLabel(std::string(to_string(method)));
}
BENCHMARK(BM_BlendPoint)->Arg(0)->Arg(1)->Arg(2);

void BM_SampleDense(benchmark::State& state) {
  const Phantom& ph = phantom();
  const ArticulatedDeformation field(ArticulatedBlend(DeformMethod::KTPolyRigid, bent()), ph.weights);
  for (auto _ : state) benchmark::DoNotOptimize(sample_dense(field, ph.grid));
}
BENCHMARK(BM_SampleDense)->Unit(benchmark::kMillisecond);

void BM_InvertField(benchmark::State& state) {
  const Phantom& ph = phantom();
  const DenseField fwd = sample_dense(ArticulatedDeformation(ArticulatedBlend(DeformMethod::KTPolyRigid, bent()), ph.weights), ph.grid);
  InversionOptions options;
  options.source_mask = ph.mask;
  for (auto _ : state) benchmark::DoNotOptimize(invert_field(fwd, options));
}
BENCHMARK(BM_InvertField)->Unit(benchmark::kMillisecond);

}  // namespace
