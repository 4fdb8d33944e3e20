#include <benchmark/benchmark.h>

#include <vector>

#include "dmh/rng.hpp"
#include "dmh/scan.hpp"

namespace {

constexpr int64_t kLanes = 32;

struct ScanInput {
  std::vector<float> a, b, h;
};

ScanInput random_input(int64_t L, uint64_t seed) {
  dmh::Rng rng(seed);
  ScanInput in;
  in.a.resize(L * kLanes);
  in.b.resize(L * kLanes);
  in.h.resize(L * kLanes);
  for (auto& v : in.a) v = static_cast<float>(0.5 + 0.5 * rng.uniform());
  for (auto& v : in.b) v = static_cast<float>(rng.normal());
  return in;
}

void bm_scan_sequential(benchmark::State& state) {
  auto in = random_input(state.range(0), 1);
  for (auto _ : state) {
    dmh::linear_scan_sequential(in.a.data(), in.b.data(), in.h.data(),
                                state.range(0), kLanes);
    benchmark::DoNotOptimize(in.h.data());
  }
}

void bm_scan_parallel(benchmark::State& state) {
  auto in = random_input(state.range(0), 1);
  for (auto _ : state) {
    dmh::linear_scan_parallel(in.a.data(), in.b.data(), in.h.data(),
                              state.range(0), kLanes);
    benchmark::DoNotOptimize(in.h.data());
  }
}

}  // namespace

BENCHMARK(bm_scan_sequential)->Arg(1 << 10)->Arg(1 << 14)->Arg(1 << 18);
BENCHMARK(bm_scan_parallel)->Arg(1 << 10)->Arg(1 << 14)->Arg(1 << 18);
BENCHMARK_MAIN();
