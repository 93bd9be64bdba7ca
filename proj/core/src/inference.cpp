#include "noprop/inference.hpp"

#include <algorithm>
#include <cmath>

#include "noprop/errors.hpp"

namespace noprop {

namespace {

void require_trained(const ModelBundle& bundle) {
    if (!bundle.trained) throw StateError("bundle has not been trained");
}

Tensor standard_normal(const Shape& shape, RngStream& stream) {
    Tensor z(shape);
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] = static_cast<real>(stream.normal());
    return z;
}

// Run a block over a whole batch in eval mode and return u_hat / v.
Tensor block_eval(DenoiseBlock& block, const Tensor& z, const Tensor& x, double t,
                  const Tensor& rows) {
    return block.forward(z, x, t, /*train=*/false, rows);
}

DecisionRule resolve_rule(DecisionRule rule, Method method) {
    if (rule != DecisionRule::MethodDefault) return rule;
    return method == Method::FM ? DecisionRule::NearestEmbedding : DecisionRule::HeadArgmax;
}

std::vector<Prediction> decide_batch(const ModelBundle& bundle, const Tensor& z,
                                     DecisionRule rule) {
    rule = resolve_rule(rule, bundle.method);
    const std::size_t B = z.extent(0), d = z.extent(1);
    std::vector<Prediction> out(B);
    if (rule == DecisionRule::HeadArgmax) {
        Graph g;
        const NodeId logits =
            SoftmaxHead::logits(g, bundle.head, kHeadTag, g.leaf_const(z));
        const Tensor& probs = g.value(g.softmax(logits));
        const std::size_t m = probs.extent(1);
        for (std::size_t b = 0; b < B; ++b) {
            Tensor row(Shape{m});
            for (std::size_t j = 0; j < m; ++j) row[j] = probs[b * m + j];
            out[b].label = decide_head_argmax(row);
            out[b].probs = std::move(row);
        }
    } else {
        for (std::size_t b = 0; b < B; ++b) {
            Tensor row(Shape{d});
            for (std::size_t k = 0; k < d; ++k) row[k] = z[b * d + k];
            out[b].label = decide_nearest_embedding(row, bundle.embed.rows());
        }
    }
    return out;
}

}  // namespace

void InferenceConfig::validate() const {
    if (steps < 1) throw ConfigError("inference steps must be >= 1");
}

int decide_head_argmax(const Tensor& probs_row) {
    int best = 0;
    for (std::size_t j = 1; j < probs_row.numel(); ++j)
        if (probs_row[j] > probs_row[best]) best = static_cast<int>(j);
    return best;
}

int decide_nearest_embedding(const Tensor& z_row, const Tensor& rows) {
    const std::size_t m = rows.extent(0), d = rows.extent(1);
    int best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) {
        double acc = 0;
        for (std::size_t k = 0; k < d; ++k) {
            const double diff = static_cast<double>(z_row[k]) - static_cast<double>(rows[j * d + k]);
            acc += diff * diff;
        }
        if (acc < best_dist) {  // strict: ties keep the lowest class index
            best_dist = acc;
            best = static_cast<int>(j);
        }
    }
    return best;
}

Tensor dt_step_affine(const Tensor& z_prev, const Tensor& u_hat, const PosteriorCoefficients& coeffs,
                      RngStream& stream) {
    if (!z_prev.same_shape(u_hat))
        throw ShapeError("dt step: z " + shape_str(z_prev.shape()) + " vs u_hat " +
                         shape_str(u_hat.shape()));
    const double sc = std::sqrt(coeffs.c);
    Tensor z(z_prev.shape());
    for (std::size_t i = 0; i < z.numel(); ++i)
        z[i] = static_cast<real>(coeffs.a * static_cast<double>(u_hat[i]) +
                                 coeffs.b * static_cast<double>(z_prev[i]) + sc * stream.normal());
    z.require_finite("dt forward step");
    return z;
}

Tensor dt_forward_step(const Tensor& z_prev, const Tensor& x, DenoiseBlock& block,
                       const EmbeddingMatrix& embed, const PosteriorCoefficients& coeffs,
                       RngStream& stream) {
    const Tensor u_hat = block_eval(block, z_prev, x, 0.0, embed.rows());
    return dt_step_affine(z_prev, u_hat, coeffs, stream);
}

std::vector<Prediction> infer_dt(ModelBundle& bundle, const Tensor& x, const InferenceConfig& cfg,
                                 RngStream stream) {
    require_trained(bundle);
    cfg.validate();
    const std::size_t B = x.extent(0);
    Tensor z = standard_normal(Shape{B, bundle.embed_dim()}, stream);
    for (std::size_t t = 1; t <= bundle.sched.T; ++t) {
        const Tensor u_hat = block_eval(bundle.blocks[t - 1], z, x, 0.0, bundle.embed.rows());
        z = dt_step_affine(z, u_hat, bundle.sched.posterior(t), stream);
    }
    return decide_batch(bundle, z, cfg.decision);
}

std::vector<Prediction> infer_ct(ModelBundle& bundle, const Tensor& x, const InferenceConfig& cfg,
                                 RngStream stream) {
    require_trained(bundle);
    cfg.validate();
    const std::size_t B = x.extent(0);
    const TrainableGamma gamma(bundle.schedule_params);
    Tensor z = standard_normal(Shape{B, bundle.embed_dim()}, stream);
    const std::size_t S = cfg.steps;
    for (std::size_t i = 0; i < S; ++i) {
        const double t0 = static_cast<double>(i) / static_cast<double>(S);
        const double t1 = static_cast<double>(i + 1) / static_cast<double>(S);
        PosteriorCoefficients pc = posterior_from_levels(gamma.alpha_bar(t0), gamma.alpha_bar(t1));
        if (i + 1 == S) pc.c = 0.0;  // final step is noise-free
        const Tensor u_hat = block_eval(bundle.blocks[0], z, x, t0, bundle.embed.rows());
        z = dt_step_affine(z, u_hat, pc, stream);
    }
    return decide_batch(bundle, z, cfg.decision);
}

Tensor euler_integrate(const std::function<Tensor(const Tensor&, double)>& field, Tensor z,
                       std::size_t steps) {
    const double h = 1.0 / static_cast<double>(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        const double t = static_cast<double>(i) / static_cast<double>(steps);
        const Tensor v = field(z, t);
        if (!v.same_shape(z))
            throw ShapeError("euler: field output " + shape_str(v.shape()) + " vs state " +
                             shape_str(z.shape()));
        for (std::size_t k = 0; k < z.numel(); ++k)
            z[k] = static_cast<real>(static_cast<double>(z[k]) + h * static_cast<double>(v[k]));
        z.require_finite("euler step");
    }
    return z;
}

std::vector<Prediction> infer_fm(ModelBundle& bundle, const Tensor& x, const InferenceConfig& cfg,
                                 RngStream stream) {
    require_trained(bundle);
    cfg.validate();
    const std::size_t B = x.extent(0);
    Tensor z0 = standard_normal(Shape{B, bundle.embed_dim()}, stream);
    Tensor z = euler_integrate(
        [&](const Tensor& zz, double t) {
            return block_eval(bundle.blocks[0], zz, x, t, bundle.embed.rows());
        },
        std::move(z0), cfg.steps);
    return decide_batch(bundle, z, cfg.decision);
}

std::vector<Prediction> infer_backprop(ModelBundle& bundle, const Tensor& x,
                                       const InferenceConfig& cfg, RngStream stream) {
    require_trained(bundle);
    cfg.validate();
    const std::size_t B = x.extent(0);
    Tensor z = standard_normal(Shape{B, bundle.embed_dim()}, stream);
    const Tensor& w = bundle.baseline.value("w");
    for (std::size_t t = 0; t < bundle.blocks.size(); ++t) {
        const double alpha = std::tanh(static_cast<double>(w[t]));
        const Tensor u_hat = block_eval(bundle.blocks[t], z, x, 0.0, bundle.embed.rows());
        for (std::size_t k = 0; k < z.numel(); ++k)
            z[k] = static_cast<real>((1.0 - alpha) * static_cast<double>(z[k]) +
                                     alpha * static_cast<double>(u_hat[k]));
    }
    return decide_batch(bundle, z, cfg.decision);
}

std::vector<Prediction> infer(ModelBundle& bundle, const Tensor& x, const InferenceConfig& cfg,
                              RngStream stream) {
    switch (bundle.method) {
        case Method::DT: return infer_dt(bundle, x, cfg, stream);
        case Method::CT: return infer_ct(bundle, x, cfg, stream);
        case Method::FM: return infer_fm(bundle, x, cfg, stream);
        case Method::Backprop: return infer_backprop(bundle, x, cfg, stream);
    }
    throw StateError("unknown method");
}

double evaluate_accuracy(ModelBundle& bundle, const DatasetHandle& ds, const InferenceConfig& cfg,
                         std::uint64_t seed, std::size_t max_examples) {
    std::vector<std::size_t> idx(ds.n);
    for (std::size_t i = 0; i < ds.n; ++i) idx[i] = i;
    if (max_examples > 0 && max_examples < ds.n) {
        RngStream shuffle = make_stream(seed, "eval-sample");
        for (std::size_t i = ds.n - 1; i > 0; --i)
            std::swap(idx[i], idx[shuffle.below(i + 1)]);
        idx.resize(max_examples);
    }
    const bool conv = bundle.cfg.block.arch == BlockArch::Conv;
    const std::size_t B = std::min<std::size_t>(256, idx.size());
    std::size_t correct = 0;
    for (std::size_t off = 0, batch_i = 0; off < idx.size(); off += B, ++batch_i) {
        const std::size_t take = std::min(B, idx.size() - off);
        std::span<const std::size_t> slice(idx.data() + off, take);
        const Tensor x = conv ? ds.batch_images_nchw(slice) : ds.batch_images_flat(slice);
        const auto labels = ds.batch_labels(slice);
        const auto preds = infer(bundle, x, cfg, make_stream(seed, "eval-infer", {batch_i}));
        for (std::size_t b = 0; b < take; ++b)
            if (preds[b].label == labels[b]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(idx.size());
}

}  // namespace noprop
