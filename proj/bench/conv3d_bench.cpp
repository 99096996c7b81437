// Compares the production im2col+GEMM 3D convolution against the literal
// nested-loop reference on a shape representative of the large pathway's
// early layers.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "nodulenet/kernels/conv3d.hpp"

using nodulenet::kernels::Conv3dDims;

namespace {

struct Workload {
    Conv3dDims d;
    std::vector<float> x, w, bias, y, col;

    explicit Workload(Conv3dDims dims) : d(dims) {
        x.resize(d.batch * d.cin * d.vox());
        w.resize(d.cout * d.cin * d.ksize());
        bias.resize(d.cout);
        y.resize(d.batch * d.cout * d.vox());
        col.resize(static_cast<size_t>(d.col_rows()) * d.vox());
        std::mt19937_64 rng(42);
        std::normal_distribution<float> g(0.f, 1.f);
        for (auto& v : x) v = g(rng);
        for (auto& v : w) v = g(rng);
        for (auto& v : bias) v = g(rng);
    }

    double flops() const {
        return 2.0 * d.batch * d.cout * d.vox() * d.cin * d.ksize();
    }
};

Conv3dDims representative() {
    // one large-pathway sample after the initial 2x2x2 pool, 8->16 channels
    return {1, 8, 16, 50, 50, 5, 3, 3, 3};
}

void BM_conv3d_reference(benchmark::State& state) {
    Workload wl(representative());
    for (auto _ : state) {
        nodulenet::kernels::conv3d_forward_reference(wl.x.data(), wl.w.data(), wl.bias.data(),
                                                     wl.y.data(), wl.d);
        benchmark::DoNotOptimize(wl.y.data());
    }
    state.SetItemsProcessed(state.iterations());
    state.counters["GFLOP/s"] =
        benchmark::Counter(wl.flops() * state.iterations() / 1e9, benchmark::Counter::kIsRate);
}

void BM_conv3d_gemm(benchmark::State& state) {
    Workload wl(representative());
    for (auto _ : state) {
        nodulenet::kernels::conv3d_forward(wl.x.data(), wl.w.data(), wl.bias.data(), wl.y.data(),
                                           wl.col.data(), wl.d);
        benchmark::DoNotOptimize(wl.y.data());
    }
    state.SetItemsProcessed(state.iterations());
    state.counters["GFLOP/s"] =
        benchmark::Counter(wl.flops() * state.iterations() / 1e9, benchmark::Counter::kIsRate);
}

} // namespace

BENCHMARK(BM_conv3d_reference)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_conv3d_gemm)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
