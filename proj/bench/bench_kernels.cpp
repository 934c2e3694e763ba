// OpenMP kernels against the serial references. Thread count is the second
// argument of the parallel benchmarks; 1 thread measures the packing alone.

#include <benchmark/benchmark.h>
#include <omp.h>

#include <random>
#include <vector>

#include "eatseg/kernels.hpp"
#include "eatseg/reference.hpp"

using namespace eatseg;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> u(-1.f, 1.f);
    std::vector<float> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

Tensor random_tensor(Shape4 s, std::uint64_t seed) {
    Tensor t(s);
    const auto v = random_vec(t.numel(), seed);
    std::copy(v.begin(), v.end(), t.data());
    return t;
}

void BM_SgemmParallel(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    omp_set_num_threads(static_cast<int>(state.range(1)));
    const auto a = random_vec(std::size_t(n) * n, 1), b = random_vec(std::size_t(n) * n, 2);
    std::vector<float> c(std::size_t(n) * n);
    for (auto _ : state) {
        kernels::sgemm(kernels::Trans::no, kernels::Trans::no, n, n, n, a.data(), n, b.data(), n, 0.f, c.data(), n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * std::int64_t(n) * n * n);
}

void BM_SgemmReference(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const auto a = random_vec(std::size_t(n) * n, 1), b = random_vec(std::size_t(n) * n, 2);
    std::vector<float> c(std::size_t(n) * n);
    for (auto _ : state) {
        reference::gemm<float>(false, false, n, n, n, a.data(), n, b.data(), n, 0.f, c.data(), n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * 2 * std::int64_t(n) * n * n);
}

// A mid-network layer: 8 samples, 56 -> 56 channels at 32 x 32.
constexpr Shape4 kConvIn{8, 56, 32, 32};
constexpr int kCout = 56;

void BM_Conv3x3Parallel(benchmark::State& state) {
    omp_set_num_threads(static_cast<int>(state.range(0)));
    const Tensor x = random_tensor(kConvIn, 3);
    const auto w = random_vec(std::size_t(kCout) * kConvIn.c * 9, 4);
    Tensor y;
    for (auto _ : state) {
        kernels::conv2d_forward(x, w, {}, kCout, 3, y);
        benchmark::DoNotOptimize(y.data());
    }
}

void BM_Conv3x3Reference(benchmark::State& state) {
    const auto x = reference::from_tensor<float>(random_tensor(kConvIn, 3));
    const auto w = random_vec(std::size_t(kCout) * kConvIn.c * 9, 4);
    for (auto _ : state) {
        auto y = reference::conv2d_forward<float>(x, w, {}, kCout, 3);
        benchmark::DoNotOptimize(y.v.data());
    }
}

}  // namespace

BENCHMARK(BM_SgemmReference)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SgemmParallel)->ArgsProduct({{128, 256}, {1, 2, 4, 8}})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_Conv3x3Reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv3x3Parallel)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
