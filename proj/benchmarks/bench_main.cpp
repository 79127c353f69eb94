#include <random>

#include <benchmark/benchmark.h>

#include "mammoforge/distance.hpp"
#include "mammoforge/evaluation.hpp"
#include "mammoforge/mesh.hpp"
#include "mammoforge/phantom.hpp"
#include "mammoforge/preprocess.hpp"
#include "mammoforge/registration.hpp"

using namespace mammoforge;

namespace {

GridMeta cube_grid(int n) {
  GridMeta m;
  m.dims = {n, n, n};
  return m;
}

LabelVolume ball(int n, double radius, double shift = 0.0) {
  const GridMeta m = cube_grid(n);
  std::vector<Label> v(m.voxel_count());
  const double c = 0.5 * (n - 1);
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Index3 q = m.unravel(i);
    const double dx = q[0] - c - shift, dy = q[1] - c, dz = q[2] - c;
    v[i] = dx * dx + dy * dy + dz * dz <= radius * radius ? labels::lesion : 0;
  }
  return LabelVolume(m, std::move(v));
}

const Phantom& phantom() {
  static const Phantom p = make_phantom({.seed = 1});
  return p;
}

}  // namespace

static void BM_DistanceTransform(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const LabelVolume b = ball(n, n / 3.0);
  std::vector<std::uint8_t> f(b.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = b[i] != 0;
  for (auto _ : state) benchmark::DoNotOptimize(squared_distance_transform(f, b.meta().dims, Vec3(1.0, 1.0, 2.0)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.size()));
}
BENCHMARK(BM_DistanceTransform)->Arg(32)->Arg(64)->Arg(128);

static void BM_Nsd(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const double tau = static_cast<double>(state.range(1));
  const LabelVolume a = ball(n, n / 3.0), b = ball(n, n / 3.0, 1.5);
  for (auto _ : state) benchmark::DoNotOptimize(nsd(a, b, labels::lesion, tau));
}
BENCHMARK(BM_Nsd)->Args({64, 2})->Args({128, 2})->Args({64, 12});

static void BM_MarchingCubes(benchmark::State& state) {
  const LabelVolume b = ball(static_cast<int>(state.range(0)), state.range(0) / 3.0);
  for (auto _ : state) benchmark::DoNotOptimize(marching_cubes(b, labels::lesion));
}
BENCHMARK(BM_MarchingCubes)->Arg(32)->Arg(96);

static void BM_Taubin(benchmark::State& state) {
  const TriangleMesh m = marching_cubes(ball(64, 20.0), labels::lesion);
  for (auto _ : state) benchmark::DoNotOptimize(smooth_taubin(m));
}
BENCHMARK(BM_Taubin);

static void BM_Similarity(benchmark::State& state) {
  const Metric metric = state.range(0) == 0 ? Metric::ncc : Metric::mi;
  const Phantom& p = phantom();
  for (auto _ : state) benchmark::DoNotOptimize(similarity(p.t1w, p.dce, p.dce_to_t1w, metric, 0.25, 0));
}
BENCHMARK(BM_Similarity)->Arg(0)->Arg(1);

static void BM_Gaussian(benchmark::State& state) {
  const Phantom& p = phantom();
  const double sigma = static_cast<double>(state.range(0)) / 10.0;
  for (auto _ : state) benchmark::DoNotOptimize(denoise_gaussian(p.t1w, sigma));
}
BENCHMARK(BM_Gaussian)->Arg(5)->Arg(20);

static void BM_RegisterRigid(benchmark::State& state) {
  const Phantom& p = phantom();
  RegistrationConfig cfg;
  cfg.metric = Metric::mi;
  for (auto _ : state) benchmark::DoNotOptimize(register_rigid(p.t1w, p.dce, cfg));
}
BENCHMARK(BM_RegisterRigid)->Unit(benchmark::kMillisecond)->Iterations(2);
BENCHMARK_MAIN();
