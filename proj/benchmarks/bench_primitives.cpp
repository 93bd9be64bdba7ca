#include <benchmark/benchmark.h>

#include "noprop/graph.hpp"
#include "noprop/rng.hpp"

using namespace noprop;

namespace {

Tensor randn(Shape shape, std::uint64_t seed) {
    RngStream s = make_stream(seed, "bench");
    return Tensor::randn(std::move(shape), s);
}

void BM_LinearForward(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const Tensor x = randn({128, n}, 1);
    const Tensor w = randn({n, n}, 2);
    const Tensor b = randn({n}, 3);
    for (auto _ : state) {
        Graph g;
        const NodeId y = g.linear(g.leaf_const(x), g.leaf_const(w), g.leaf_const(b));
        benchmark::DoNotOptimize(g.value(y).data());
    }
    state.SetItemsProcessed(state.iterations() * 128 * n * n);
}
BENCHMARK(BM_LinearForward)->Arg(64)->Arg(256)->Arg(1024);

void BM_Conv2dForward(benchmark::State& state) {
    const std::size_t c = static_cast<std::size_t>(state.range(0));
    const Tensor x = randn({16, c, 28, 28}, 1);
    const Tensor w = randn({2 * c, c, 3, 3}, 2);
    const Tensor b = randn({2 * c}, 3);
    for (auto _ : state) {
        Graph g;
        const NodeId y = g.conv2d(g.leaf_const(x), g.leaf_const(w), g.leaf_const(b));
        benchmark::DoNotOptimize(g.value(y).data());
    }
}
BENCHMARK(BM_Conv2dForward)->Arg(4)->Arg(16)->Arg(32);

void BM_LinearBackward(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const Tensor x = randn({128, n}, 1);
    const Tensor w = randn({n, n}, 2);
    for (auto _ : state) {
        Graph g;
        const NodeId wp = g.leaf_param("w", w);
        const NodeId loss = g.mean_reduce(g.squared_l2(g.linear(g.leaf_const(x), wp)));
        const GradMap grads = g.backward(loss);
        benchmark::DoNotOptimize(grads.at("w").data());
    }
}
BENCHMARK(BM_LinearBackward)->Arg(64)->Arg(256);

void BM_SoftmaxCrossEntropy(benchmark::State& state) {
    const Tensor logits = randn({128, 10}, 1);
    std::vector<int> y(128);
    for (int i = 0; i < 128; ++i) y[i] = i % 10;
    for (auto _ : state) {
        Graph g;
        const NodeId lp = g.leaf_param("l", logits);
        const GradMap grads = g.backward(g.cross_entropy_logits(lp, y));
        benchmark::DoNotOptimize(grads.at("l").data());
    }
}
BENCHMARK(BM_SoftmaxCrossEntropy);

}  // namespace

BENCHMARK_MAIN();
