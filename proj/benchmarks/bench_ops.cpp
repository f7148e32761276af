#include <benchmark/benchmark.h>

#include "psagan/layers.hpp"
#include "psagan/model.hpp"
#include "psagan/tensor.hpp"

// Throughput of the hot tensor ops (forward-only, autograd off) and one
// full generator pass, to catch performance regressions in the core loops.

using namespace psagan;

namespace {

void BM_Conv1d(benchmark::State& state) {
    NoGradGuard ng;
    Rng rng(0);
    const std::int64_t c = state.range(0), l = state.range(1);
    Tensor x = random_normal({8, c, l}, rng);
    Tensor w = random_normal({c, c, 3}, rng);
    Tensor bias = random_normal({c}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(conv1d(x, w, bias, 1, 1));
    }
    state.SetItemsProcessed(state.iterations() * 8 * c * c * 3 * l);
}

void BM_Matmul(benchmark::State& state) {
    NoGradGuard ng;
    Rng rng(1);
    const std::int64_t n = state.range(0);
    Tensor a = random_normal({n, n}, rng);
    Tensor b = random_normal({n, n}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b));
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}

void BM_Bmm(benchmark::State& state) {
    NoGradGuard ng;
    Rng rng(2);
    const std::int64_t l = state.range(0);
    Tensor a = random_normal({8, l, l}, rng);
    Tensor b = random_normal({8, l, 32}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(bmm(a, b));
    }
    state.SetItemsProcessed(state.iterations() * 8 * l * l * 32);
}

void BM_Attention(benchmark::State& state) {
    NoGradGuard ng;
    Rng rng(3);
    const std::int64_t l = state.range(0);
    SelfAttention1d attn(32, rng);
    Tensor x = random_normal({8, 32, l}, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(attn.attend(x, false));
    }
    state.SetItemsProcessed(state.iterations() * 8 * l * l);
}

void BM_GeneratorForward(benchmark::State& state) {
    NoGradGuard ng;
    Rng rng(4);
    const std::int64_t tau = state.range(0);
    ModelShape shape;
    shape.tau = tau;
    shape.n_series = 4;
    GeneratorStack gen(shape, rng);
    while (gen.growth_stage() < shape.n_stages()) gen.grow(rng);
    gen.set_alpha(1.0f);
    std::vector<std::int64_t> series = {0, 1, 2, 3};
    Tensor feats = random_normal({4, shape.d_time, tau}, rng);
    for (auto _ : state) {
        Tensor noise = random_normal({4, 1, tau}, rng);
        benchmark::DoNotOptimize(gen.forward(noise, series, feats, false));
    }
    state.SetItemsProcessed(state.iterations() * 4 * tau);
}

}  // namespace

BENCHMARK(BM_Conv1d)->Args({32, 64})->Args({32, 256})->Args({64, 256});
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);
BENCHMARK(BM_Bmm)->Arg(64)->Arg(256);
BENCHMARK(BM_Attention)->Arg(64)->Arg(256);
BENCHMARK(BM_GeneratorForward)->Arg(64)->Arg(256);

BENCHMARK_MAIN();
