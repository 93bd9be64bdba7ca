#include "noprop/model.hpp"

#include "noprop/errors.hpp"

namespace noprop {

const char* method_name(Method m) {
    switch (m) {
        case Method::DT: return "dt";
        case Method::CT: return "ct";
        case Method::FM: return "fm";
        case Method::Backprop: return "backprop";
    }
    return "?";
}

Method method_from_name(const std::string& name) {
    if (name == "dt") return Method::DT;
    if (name == "ct") return Method::CT;
    if (name == "fm") return Method::FM;
    if (name == "backprop") return Method::Backprop;
    throw ConfigError("unknown method '" + name + "'");
}

void TrainConfig::validate() const {
    optimizer.validate();
    if (T < 1) throw ConfigError("T must be >= 1");
    if (batch < 1) throw ConfigError("batch size must be >= 1");
    if ((method == Method::DT || method == Method::CT) && !(eta > 0))
        throw ConfigError("eta must be > 0 for dt/ct");
    if (parallel && embed_mode != EmbedMode::OneHotFixed)
        throw ConfigError("parallel training requires fixed one-hot embeddings");
    if (parallel && method != Method::DT)
        throw ConfigError("parallel training is only defined for dt");
    if (method == Method::FM && !(fm_sigma > 0)) throw ConfigError("fm sigma must be > 0");
    if (!(radial_sigma > 0)) throw ConfigError("radial sigma must be > 0");
    if (inference_steps < 1) throw ConfigError("inference steps must be >= 1");
}

void apply_method_defaults(TrainConfig& cfg) {
    if (cfg.method == Method::CT || cfg.method == Method::FM) {
        cfg.optimizer.kind = OptimizerKind::Adam;
        if (cfg.method == Method::CT) cfg.eta = 1.0;
    }
}

ModelBundle ModelBundle::create(const TrainConfig& cfg, const DatasetHandle& dataset) {
    cfg.validate();
    dataset.validate();
    const std::size_t m = dataset.num_classes;

    ModelBundle b;
    b.method = cfg.method;
    b.cfg = cfg;
    b.seed = cfg.seed;
    b.img_c = dataset.channels;
    b.img_h = dataset.height;
    b.img_w = dataset.width;

    switch (cfg.embed_mode) {
        case EmbedMode::OneHotFixed: b.embed = EmbeddingMatrix::one_hot(m); break;
        case EmbedMode::LearnedDim: b.embed = EmbeddingMatrix::learned(m, cfg.embed_dim, cfg.seed); break;
        case EmbedMode::Prototype: b.embed = EmbeddingMatrix::prototype(dataset); break;
    }
    const std::size_t d = b.embed.d;

    const auto variant = [&] {
        switch (cfg.method) {
            case Method::CT: return DenoiseBlock::Variant::ContinuousTime;
            case Method::FM: return DenoiseBlock::Variant::Flow;
            default: return DenoiseBlock::Variant::DiscreteTime;
        }
    }();
    const std::size_t block_count = (cfg.method == Method::DT || cfg.method == Method::Backprop)
                                        ? cfg.T
                                        : 1;
    for (std::size_t t = 0; t < block_count; ++t) {
        DenoiseBlock blk(variant, cfg.block, m, d, dataset.channels, dataset.height, dataset.width);
        blk.init_params(detail::mix64(cfg.seed, 1000 + t));
        b.blocks.push_back(std::move(blk));
    }

    SoftmaxHead::init_params(b.head, d, m, detail::mix64(cfg.seed, 7));

    if (cfg.method == Method::DT || cfg.method == Method::Backprop)
        b.sched = cosine_alpha_bar(cfg.T);
    if (cfg.method == Method::CT)
        TrainableGamma::init_params(b.schedule_params, cfg.gamma_hidden, -7.0, 7.0, cfg.seed);
    if (cfg.method == Method::Backprop)
        b.baseline.add("w", Tensor(Shape{cfg.T, 1}, real(1)));

    return b;
}

}  // namespace noprop
