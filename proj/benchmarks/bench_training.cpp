#include <benchmark/benchmark.h>

#include "noprop/trainer.hpp"

using namespace noprop;

namespace {

void BM_DtUpdateStep(benchmark::State& state) {
    const std::size_t width = static_cast<std::size_t>(state.range(0));
    const DatasetHandle blobs = synth_blobs(64, 2, 2, 10.0, 1);
    TrainConfig cfg;
    cfg.method = Method::DT;
    cfg.T = 4;
    cfg.batch = 64;
    cfg.block = BlockConfig::mlp(width);
    ModelBundle bundle = ModelBundle::create(cfg, blobs);

    std::vector<std::size_t> idx(64);
    for (std::size_t i = 0; i < 64; ++i) idx[i] = i;
    const Tensor x = blobs.batch_images_flat(idx);
    const auto y = blobs.batch_labels(idx);

    std::uint64_t step = 0;
    for (auto _ : state) {
        Graph g;
        const auto nodes = build_dt_loss(g, bundle, x, y, 1, cfg.eta,
                                         make_stream(1, "zp", {step}), make_stream(1, "zT", {step}),
                                         true);
        const GradMap grads = g.backward(nodes.total);
        optimizer_step(bundle.blocks[0].params(), strip_prefix(grads, "block"), cfg.optimizer);
        ++step;
    }
}
BENCHMARK(BM_DtUpdateStep)->Arg(32)->Arg(128)->Arg(512);

void BM_BackpropUpdateStep(benchmark::State& state) {
    const std::size_t T = static_cast<std::size_t>(state.range(0));
    const DatasetHandle blobs = synth_blobs(64, 2, 2, 10.0, 1);
    TrainConfig cfg;
    cfg.method = Method::Backprop;
    cfg.T = T;
    cfg.batch = 64;
    cfg.block = BlockConfig::mlp(64);
    ModelBundle bundle = ModelBundle::create(cfg, blobs);

    std::vector<std::size_t> idx(64);
    for (std::size_t i = 0; i < 64; ++i) idx[i] = i;
    const Tensor x = blobs.batch_images_flat(idx);
    const auto y = blobs.batch_labels(idx);

    std::uint64_t step = 0;
    for (auto _ : state) {
        Graph g;
        const NodeId loss = build_backprop_loss(g, bundle, x, y, make_stream(1, "z0", {step}), true);
        const GradMap grads = g.backward(loss);
        benchmark::DoNotOptimize(&grads);
        ++step;
    }
}
BENCHMARK(BM_BackpropUpdateStep)->Arg(2)->Arg(10);

void BM_CtLossBuild(benchmark::State& state) {
    const DatasetHandle blobs = synth_blobs(64, 2, 2, 10.0, 1);
    TrainConfig cfg;
    cfg.method = Method::CT;
    cfg.T = 1;
    cfg.batch = 64;
    cfg.block = BlockConfig::mlp(64);
    apply_method_defaults(cfg);
    ModelBundle bundle = ModelBundle::create(cfg, blobs);

    std::vector<std::size_t> idx(64);
    for (std::size_t i = 0; i < 64; ++i) idx[i] = i;
    const Tensor x = blobs.batch_images_flat(idx);
    const auto y = blobs.batch_labels(idx);
    Tensor t_batch(Shape{64, 1});
    RngStream ts = make_stream(1, "t");
    for (std::size_t i = 0; i < 64; ++i) t_batch[i] = static_cast<real>(ts.uniform());

    std::uint64_t step = 0;
    for (auto _ : state) {
        Graph g;
        const auto nodes =
            build_ct_loss(g, bundle, x, y, t_batch, cfg.eta, make_stream(1, "n", {step}), true);
        const GradMap grads = g.backward(nodes.total);
        benchmark::DoNotOptimize(&grads);
        ++step;
    }
}
BENCHMARK(BM_CtLossBuild);

}  // namespace
