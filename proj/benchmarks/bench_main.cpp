#include <benchmark/benchmark.h>

#include <random>

#include "rego/acs.hpp"
#include "rego/metrics.hpp"
#include "rego/styleloss.hpp"

using namespace rego;

namespace {

Tensor noise(const Dims& dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Tensor t(dims);
  for (double& v : t.storage()) v = u(rng);
  return t;
}

void BM_Conv3x3(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const Var x = constant(noise({32, 64, c}, 1));
  const Var w = constant(noise({3, 3, c, c}, 2));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(ops::conv2d(x, w, Var(), {1, 1, 1}));
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(64);

void BM_Distill(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const Var ref = constant(noise({16, 32, c}, 3));
  const DynamicKernel k = normalize_kernel({constant(noise({3, 3, c}, 4)), false});
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(distill_reference(ref, k));
}
BENCHMARK(BM_Distill)->Arg(32)->Arg(128);

void BM_AcsForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  ParamStore store;
  Rng rng(5);
  const AcsModule m(store, "acs", {16, 16, c, c / 2}, rng);
  const Var f = constant(noise({16, 32, c}, 6));
  const Var ref = constant(noise({16, 16, c}, 7));
  const Var sk = constant(noise({16, 16, c / 2}, 8));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(acs_forward(f, ref, sk, m, ops::NormMode::Frozen));
}
BENCHMARK(BM_AcsForward)->Arg(32)->Arg(64);

void BM_Gram(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const Var f = constant(noise({32, 32, c}, 9));
  NoGradGuard guard;
  for (auto _ : state) benchmark::DoNotOptimize(gram_matrix(f));
}
BENCHMARK(BM_Gram)->Arg(32)->Arg(128);

void BM_Fid(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  std::vector<std::vector<double>> a, b;
  std::mt19937_64 rng(10);
  std::normal_distribution<double> g;
  for (int i = 0; i < 4 * m; ++i) {
    a.emplace_back(m);
    b.emplace_back(m);
    for (int j = 0; j < m; ++j) {
      a.back()[j] = g(rng);
      b.back()[j] = g(rng) + 0.1;
    }
  }
  const auto ra = DistributionStats::from_vectors(a), rb = DistributionStats::from_vectors(b);
  for (auto _ : state) benchmark::DoNotOptimize(fid(ra, rb));
}
BENCHMARK(BM_Fid)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
