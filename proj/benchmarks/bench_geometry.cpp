#include <benchmark/benchmark.h>

#include <random>

#include "ktpr/geometry.hpp"

using namespace ktpr;

namespace {

std::vector<Twist> random_twists(int n) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Twist> out;
  for (int i = 0; i < n; ++i) out.emplace_back(Vec3(u(rng), u(rng), u(rng)) * 1.5, Vec3(u(rng), u(rng), u(rng)) * 50.0);
  return out;
}

void BM_Se3Exp(benchmark::State& state) {
  const auto twists = random_twists(256);
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(se3_exp(twists[i++ & 255]));
}
BENCHMARK(BM_Se3Exp);

void BM_Se3Log(benchmark::State& state) {
  std::vector<RigidTransform> t;
  for (const Twist& xi : random_twists(256)) t.push_back(se3_exp(xi));
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(se3_log(t[i++ & 255]));
}
BENCHMARK(BM_Se3Log);

}  // namespace
