#include "noprop/checks.hpp"

#include <cmath>
#include <numbers>

#include "noprop/dataset.hpp"
#include "noprop/gradcheck.hpp"
#include "noprop/graph.hpp"
#include "noprop/model.hpp"
#include "noprop/schedule.hpp"
#include "noprop/trainer.hpp"

namespace noprop::checks {

namespace {

constexpr double kGradTol = 1e-5;

Tensor randn(Shape shape, RngStream& s, real scale = real(1)) {
    return Tensor::randn(std::move(shape), s, scale);
}

// One finite-difference check over a self-contained builder.
CheckResult fd_check(const std::string& name, std::vector<std::pair<std::string, ParamStore*>> stores,
                     const GraphBuilder& build) {
    const GradCheckReport rep = grad_check(stores, build);
    CheckResult r;
    r.name = name;
    r.metric = rep.max_rel_error;
    r.threshold = kGradTol;
    r.pass = rep.pass(kGradTol);
    if (!r.pass) r.note = "worst at " + rep.worst_param;
    return r;
}

double log_normal_pdf(double x, double mean, double var) {
    const double d = x - mean;
    return -0.5 * std::log(2.0 * std::numbers::pi * var) - d * d / (2.0 * var);
}

}  // namespace

std::vector<CheckResult> primitive_grad_checks(std::uint64_t seed) {
    std::vector<CheckResult> out;
    RngStream s = make_stream(seed, "prim-check");

    auto scalarize = [](Graph& g, NodeId x) { return g.mean_reduce(x); };

    {  // linear, rank-1 and rank-2 inputs
        ParamStore p;
        p.add("x", randn(Shape{3, 4}, s));
        p.add("w", randn(Shape{4, 5}, s));
        p.add("b", randn(Shape{5}, s));
        out.push_back(fd_check("linear", {{"p", &p}}, [&](Graph& g) {
            return g.mean_reduce(g.linear(graph_param(g, p, "p", "x"), graph_param(g, p, "p", "w"),
                                          graph_param(g, p, "p", "b")));
        }));
    }
    {  // conv2d with stride and padding
        ParamStore p;
        p.add("x", randn(Shape{2, 2, 4, 4}, s));
        p.add("w", randn(Shape{3, 2, 3, 3}, s));
        p.add("b", randn(Shape{3}, s));
        out.push_back(fd_check("conv2d", {{"p", &p}}, [&](Graph& g) {
            return g.mean_reduce(g.conv2d(graph_param(g, p, "p", "x"), graph_param(g, p, "p", "w"),
                                          graph_param(g, p, "p", "b"), 2, 1));
        }));
    }
    {  // relu away from the kink
        ParamStore p;
        Tensor x = randn(Shape{4, 4}, s);
        for (std::size_t i = 0; i < x.numel(); ++i)
            if (std::abs(x[i]) < real(0.05)) x[i] += real(0.1);
        p.add("x", std::move(x));
        out.push_back(fd_check("relu", {{"p", &p}}, [&](Graph& g) {
            return g.mean_reduce(g.relu(graph_param(g, p, "p", "x")));
        }));
    }
    {  // batchnorm, train mode (rank 2) and eval mode (rank 4)
        ParamStore p;
        p.add("x", randn(Shape{4, 3}, s));
        p.add("g", randn(Shape{3}, s));
        p.add("b", randn(Shape{3}, s));
        const Tensor c = randn(Shape{4, 3}, s);
        out.push_back(fd_check("batchnorm-train", {{"p", &p}}, [&, c](Graph& g) {
            return g.mean_reduce(g.mul(
                g.batchnorm_train(graph_param(g, p, "p", "x"), graph_param(g, p, "p", "g"),
                                  graph_param(g, p, "p", "b")),
                g.leaf_const(c)));
        }));
    }
    {
        ParamStore p;
        p.add("x", randn(Shape{2, 3, 2, 2}, s));
        p.add("g", randn(Shape{3}, s));
        p.add("b", randn(Shape{3}, s));
        Tensor rm = randn(Shape{3}, s, real(0.3));
        Tensor rv(Shape{3});
        for (std::size_t i = 0; i < 3; ++i) rv[i] = real(0.5) + real(0.4) * static_cast<real>(i);
        const Tensor rm_c = rm, rv_c = rv;
        out.push_back(fd_check("batchnorm-eval", {{"p", &p}}, [&, rm_c, rv_c](Graph& g) {
            return g.mean_reduce(g.batchnorm_eval(graph_param(g, p, "p", "x"),
                                                  graph_param(g, p, "p", "g"),
                                                  graph_param(g, p, "p", "b"), g.leaf_const(rm_c),
                                                  g.leaf_const(rv_c)));
        }));
    }
    {  // softmax / log-softmax composed with a fixed readout
        ParamStore p;
        p.add("x", randn(Shape{3, 4}, s));
        const Tensor c = randn(Shape{3, 4}, s);
        out.push_back(fd_check("softmax", {{"p", &p}}, [&, c](Graph& g) {
            return g.mean_reduce(g.mul(g.softmax(graph_param(g, p, "p", "x")), g.leaf_const(c)));
        }));
        out.push_back(fd_check("log-softmax", {{"p", &p}}, [&, c](Graph& g) {
            return g.mean_reduce(g.mul(g.log_softmax(graph_param(g, p, "p", "x")), g.leaf_const(c)));
        }));
    }
    {  // concat
        ParamStore p;
        p.add("a", randn(Shape{2, 3}, s));
        p.add("b", randn(Shape{2, 2}, s));
        const Tensor c = randn(Shape{2, 5}, s);
        out.push_back(fd_check("concat", {{"p", &p}}, [&, c](Graph& g) {
            return g.mean_reduce(g.mul(
                g.concat({graph_param(g, p, "p", "a"), graph_param(g, p, "p", "b")}, 1),
                g.leaf_const(c)));
        }));
    }
    {  // add / elementwise-mul with broadcasting
        ParamStore p;
        p.add("a", randn(Shape{3, 4}, s));
        p.add("b", randn(Shape{1, 4}, s));
        p.add("c", randn(Shape{3, 1}, s));
        out.push_back(fd_check("add-broadcast", {{"p", &p}}, [&](Graph& g) {
            return g.mean_reduce(
                g.add(g.add(graph_param(g, p, "p", "a"), graph_param(g, p, "p", "b")),
                      graph_param(g, p, "p", "c")));
        }));
        out.push_back(fd_check("elementwise-mul-broadcast", {{"p", &p}}, [&](Graph& g) {
            return g.mean_reduce(
                g.mul(g.mul(graph_param(g, p, "p", "a"), graph_param(g, p, "p", "b")),
                      graph_param(g, p, "p", "c")));
        }));
    }
    {  // scalar-mul, reductions, squared-l2
        ParamStore p;
        p.add("x", randn(Shape{3, 3}, s));
        out.push_back(fd_check("scalar-mul", {{"p", &p}}, [&](Graph& g) {
            return g.sum_reduce(g.scalar_mul(graph_param(g, p, "p", "x"), real(-1.7)));
        }));
        out.push_back(fd_check("sum-reduce", {{"p", &p}}, [&](Graph& g) {
            return g.sum_reduce(graph_param(g, p, "p", "x"));
        }));
        out.push_back(fd_check("mean-reduce", {{"p", &p}}, [&](Graph& g) {
            return g.mean_reduce(graph_param(g, p, "p", "x"));
        }));
        out.push_back(fd_check("squared-l2", {{"p", &p}}, [&](Graph& g) {
            return g.mean_reduce(g.squared_l2(graph_param(g, p, "p", "x")));
        }));
    }
    {  // cross-entropy-from-logits
        ParamStore p;
        p.add("x", randn(Shape{4, 3}, s));
        out.push_back(fd_check("cross-entropy-from-logits", {{"p", &p}}, [&](Graph& g) {
            return g.cross_entropy_logits(graph_param(g, p, "p", "x"), {0, 2, 1, 2});
        }));
    }
    {  // sinusoidal time embedding (gradient w.r.t. t)
        ParamStore p;
        Tensor t(Shape{3, 1});
        t[0] = real(0.17);
        t[1] = real(0.52);
        t[2] = real(0.91);
        p.add("t", std::move(t));
        const Tensor c = randn(Shape{3, 8}, s);
        out.push_back(fd_check("sinusoidal-time-embedding", {{"p", &p}}, [&, c](Graph& g) {
            return g.mean_reduce(
                g.mul(g.time_embedding(graph_param(g, p, "p", "t"), 8, 10.0), g.leaf_const(c)));
        }));
    }
    {  // max-pool2d with well-separated entries
        ParamStore p;
        Tensor x(Shape{1, 2, 4, 4});
        for (std::size_t i = 0; i < x.numel(); ++i)
            x[i] = static_cast<real>(0.01 * static_cast<double>((i * 7) % 32));
        p.add("x", std::move(x));
        out.push_back(fd_check("max-pool2d", {{"p", &p}}, [&](Graph& g) {
            return g.mean_reduce(g.max_pool2d(graph_param(g, p, "p", "x"), 2));
        }));
    }
    {  // dropout: fixed stream, train and eval
        ParamStore p;
        p.add("x", randn(Shape{4, 4}, s));
        out.push_back(fd_check("dropout-train", {{"p", &p}}, [&](Graph& g) {
            return g.mean_reduce(
                g.dropout(graph_param(g, p, "p", "x"), 0.7, true, make_stream(7, "drop")));
        }));
        out.push_back(fd_check("dropout-eval", {{"p", &p}}, [&](Graph& g) {
            return g.mean_reduce(
                g.dropout(graph_param(g, p, "p", "x"), 0.7, false, make_stream(7, "drop")));
        }));
    }
    {  // reshape
        ParamStore p;
        p.add("x", randn(Shape{2, 6}, s));
        const Tensor c = randn(Shape{3, 4}, s);
        out.push_back(fd_check("reshape", {{"p", &p}}, [&, c](Graph& g) {
            return g.mean_reduce(g.mul(g.reshape(graph_param(g, p, "p", "x"), Shape{3, 4}),
                                       g.leaf_const(c)));
        }));
    }
    {  // embed-select (scatter gradient, repeated rows)
        ParamStore p;
        p.add("w", randn(Shape{4, 3}, s));
        const Tensor c = randn(Shape{5, 3}, s);
        out.push_back(fd_check("embed-select", {{"p", &p}}, [&, c](Graph& g) {
            return g.mean_reduce(
                g.mul(g.embed_select(graph_param(g, p, "p", "w"), {0, 2, 2, 3, 1}), g.leaf_const(c)));
        }));
    }
    {  // pairwise-sqdist
        ParamStore p;
        p.add("z", randn(Shape{3, 4}, s));
        p.add("w", randn(Shape{2, 4}, s));
        out.push_back(fd_check("pairwise-sqdist", {{"p", &p}}, [&](Graph& g) {
            return g.mean_reduce(
                g.pairwise_sqdist(graph_param(g, p, "p", "z"), graph_param(g, p, "p", "w")));
        }));
    }
    {  // elementwise math
        ParamStore p;
        Tensor pos(Shape{3, 3});
        for (std::size_t i = 0; i < pos.numel(); ++i)
            pos[i] = real(0.4) + real(0.25) * static_cast<real>(i);
        p.add("x", randn(Shape{3, 3}, s));
        p.add("pos", std::move(pos));
        auto unary = [&](const char* name, auto fn, const char* src) {
            out.push_back(fd_check(name, {{"p", &p}}, [&, fn, src](Graph& g) {
                return g.mean_reduce(fn(g, graph_param(g, p, "p", src)));
            }));
        };
        unary("exp", [](Graph& g, NodeId x) { return g.exp(x); }, "x");
        unary("log", [](Graph& g, NodeId x) { return g.log(x); }, "pos");
        unary("sqrt", [](Graph& g, NodeId x) { return g.sqrt(x); }, "pos");
        unary("sigmoid", [](Graph& g, NodeId x) { return g.sigmoid(x); }, "x");
        unary("softplus", [](Graph& g, NodeId x) { return g.softplus(x); }, "x");
        unary("reciprocal", [](Graph& g, NodeId x) { return g.reciprocal(x); }, "pos");
        unary("tanh", [](Graph& g, NodeId x) { return g.tanh(x); }, "x");
    }
    (void)scalarize;
    return out;
}

// Move every zero-initialized bias off the relu kink so central differences
// stay on one side of it.
void nudge_biases(ModelBundle& bundle, std::uint64_t seed) {
    RngStream s = make_stream(seed, "bias-nudge");
    auto nudge = [&](ParamStore& store) {
        for (const auto& name : store.names()) {
            if (name.size() < 2 || name.rfind(".b") != name.size() - 2) continue;
            Tensor& v = store.value(name);
            for (std::size_t i = 0; i < v.numel(); ++i)
                v[i] += static_cast<real>(0.05 + 0.1 * s.uniform()) *
                        (s.uniform() < 0.5 ? real(1) : real(-1));
        }
    };
    for (auto& b : bundle.blocks) nudge(b.params());
    nudge(bundle.head);
}

std::vector<CheckResult> block_grad_checks(std::uint64_t seed) {
    std::vector<CheckResult> out;
    const DatasetHandle blobs = synth_blobs(4, 2, 2, 10.0, seed + 11);

    auto tiny_cfg = [&](Method method) {
        TrainConfig cfg;
        cfg.method = method;
        cfg.T = 3;
        cfg.batch = 4;
        cfg.block = BlockConfig::mlp(6);
        cfg.seed = seed;
        cfg.eta = 0.37;
        apply_method_defaults(cfg);
        return cfg;
    };

    const std::vector<std::size_t> idx{0, 2, 5, 7};
    const Tensor x = blobs.batch_images_flat(idx);
    const std::vector<int> y = blobs.batch_labels(idx);

    {  // discrete-time per-step objective: block + head params
        TrainConfig cfg = tiny_cfg(Method::DT);
        ModelBundle bundle = ModelBundle::create(cfg, blobs);
        nudge_biases(bundle, seed + 101);
        out.push_back(fd_check(
            "dt block loss",
            {{"block", &bundle.blocks[1].params()}, {"head", &bundle.head}}, [&](Graph& g) {
                return build_dt_loss(g, bundle, x, y, 2, cfg.eta, make_stream(3, "zp"),
                                     make_stream(3, "zT"), true)
                    .total;
            }));
    }
    {  // dt with learned embeddings: gradient reaches the embedding rows
        TrainConfig cfg = tiny_cfg(Method::DT);
        cfg.embed_mode = EmbedMode::LearnedDim;
        cfg.embed_dim = 3;
        ModelBundle bundle = ModelBundle::create(cfg, blobs);
        nudge_biases(bundle, seed + 102);
        out.push_back(fd_check(
            "dt block loss (learned embeddings)",
            {{"block", &bundle.blocks[0].params()},
             {"head", &bundle.head},
             {"embed", &bundle.embed.store}},
            [&](Graph& g) {
                return build_dt_loss(g, bundle, x, y, 1, cfg.eta, make_stream(5, "zp"),
                                     make_stream(5, "zT"), true)
                    .total;
            }));
    }
    {  // continuous-time objective incl. the trainable schedule
        TrainConfig cfg = tiny_cfg(Method::CT);
        cfg.gamma_hidden = 4;
        ModelBundle bundle = ModelBundle::create(cfg, blobs);
        nudge_biases(bundle, seed + 103);
        Tensor t_batch(Shape{4, 1});
        t_batch[0] = real(0.12);
        t_batch[1] = real(0.41);
        t_batch[2] = real(0.68);
        t_batch[3] = real(0.93);
        out.push_back(fd_check(
            "ct block loss (incl. schedule params)",
            {{"block", &bundle.blocks[0].params()},
             {"head", &bundle.head},
             {"sched", &bundle.schedule_params}},
            [&](Graph& g) {
                return build_ct_loss(g, bundle, x, y, t_batch, cfg.eta, make_stream(9, "noise"), true)
                    .total;
            }));
    }
    {  // flow-matching objective, anchored branch (learned embeddings)
        TrainConfig cfg = tiny_cfg(Method::FM);
        cfg.embed_mode = EmbedMode::LearnedDim;
        cfg.embed_dim = 3;
        ModelBundle bundle = ModelBundle::create(cfg, blobs);
        nudge_biases(bundle, seed + 104);
        Tensor t_batch(Shape{4, 1});
        t_batch[0] = real(0.07);
        t_batch[1] = real(0.33);
        t_batch[2] = real(0.58);
        t_batch[3] = real(0.88);
        out.push_back(fd_check(
            "fm anchored loss",
            {{"block", &bundle.blocks[0].params()},
             {"head", &bundle.head},
             {"embed", &bundle.embed.store}},
            [&](Graph& g) {
                return build_fm_loss(g, bundle, x, y, t_batch, make_stream(13, "noise"), true).total;
            }));
    }
    {  // dt objective under the radial class-probability head
        TrainConfig cfg = tiny_cfg(Method::DT);
        cfg.head = HeadKind::Radial;
        cfg.radial_sigma = 0.8;
        ModelBundle bundle = ModelBundle::create(cfg, blobs);
        nudge_biases(bundle, seed + 301);
        out.push_back(fd_check(
            "dt block loss (radial head)",
            {{"block", &bundle.blocks[0].params()}, {"head", &bundle.head}}, [&](Graph& g) {
                return build_dt_loss(g, bundle, x, y, 1, cfg.eta, make_stream(23, "zp"),
                                     make_stream(23, "zT"), true)
                    .total;
            }));
    }
    {  // end-to-end baseline: one graph across all blocks
        TrainConfig cfg = tiny_cfg(Method::Backprop);
        ModelBundle bundle = ModelBundle::create(cfg, blobs);
        nudge_biases(bundle, seed + 105);
        std::vector<std::pair<std::string, ParamStore*>> stores{{"head", &bundle.head},
                                                                {"base", &bundle.baseline}};
        for (std::size_t t = 1; t <= cfg.T; ++t)
            stores.emplace_back("b" + std::to_string(t), &bundle.blocks[t - 1].params());
        out.push_back(fd_check("backprop chain loss", stores, [&](Graph& g) {
            return build_backprop_loss(g, bundle, x, y, make_stream(17, "z0"), true);
        }));
    }
    {  // conv block at tiny width
        TrainConfig cfg = tiny_cfg(Method::DT);
        cfg.block = BlockConfig::conv_default();
        cfg.block.conv1_channels = 2;
        cfg.block.conv2_channels = 3;
        cfg.block.feat_width = 5;
        cfg.block.fusion_width = 5;
        DatasetHandle imgs;
        imgs.n = 4;
        imgs.height = 10;
        imgs.width = 10;
        imgs.channels = 1;
        imgs.num_classes = 2;
        RngStream istream = make_stream(seed, "imgs");
        imgs.images.resize(imgs.n * imgs.image_dim());
        for (auto& v : imgs.images) v = static_cast<float>(istream.uniform());
        imgs.labels = {0, 1, 1, 0};
        ModelBundle bundle = ModelBundle::create(cfg, imgs);
        nudge_biases(bundle, seed + 106);
        const std::vector<std::size_t> iidx{0, 1, 2, 3};
        const Tensor xi = imgs.batch_images_nchw(iidx);
        const std::vector<int> yi = imgs.batch_labels(iidx);
        out.push_back(fd_check(
            "dt conv block loss", {{"block", &bundle.blocks[0].params()}, {"head", &bundle.head}},
            [&](Graph& g) {
                return build_dt_loss(g, bundle, xi, yi, 1, cfg.eta, make_stream(21, "zp"),
                                     make_stream(21, "zT"), true)
                    .total;
            }));
    }
    return out;
}

CheckResult bayes_posterior_check(std::size_t pairs, std::uint64_t seed) {
    RngStream s = make_stream(seed, "bayes");
    double worst = 0;
    for (std::size_t i = 0; i < pairs; ++i) {
        // random levels with ab_prev < ab_next, kept away from the endpoints
        double ab_next = 0.05 + 0.9 * s.uniform();
        double ab_prev = ab_next * (0.05 + 0.9 * s.uniform());
        const double u = 2.0 * s.normal();
        const double z_prev = 2.0 * s.normal();

        const PosteriorCoefficients pc = posterior_from_levels(ab_prev, ab_next);

        // grid quadrature of f(z) ~ q(z|y) * q(z_prev | z)
        const double alpha = ab_prev / ab_next;
        const double mean_guess = pc.a * u + pc.b * z_prev;
        const double width = 12.0 * std::sqrt(std::max(pc.c, 1e-6));
        const std::size_t N = 6001;
        double w_sum = 0, m_sum = 0, v_sum = 0;
        std::vector<double> zs(N), ws(N);
        for (std::size_t k = 0; k < N; ++k) {
            const double z = mean_guess - width / 2 +
                             width * static_cast<double>(k) / static_cast<double>(N - 1);
            const double logf = log_normal_pdf(z, std::sqrt(ab_next) * u, 1.0 - ab_next) +
                                log_normal_pdf(z_prev, std::sqrt(alpha) * z, 1.0 - alpha);
            zs[k] = z;
            ws[k] = std::exp(logf);
            w_sum += ws[k];
        }
        for (std::size_t k = 0; k < N; ++k) m_sum += ws[k] * zs[k];
        const double mean = m_sum / w_sum;
        for (std::size_t k = 0; k < N; ++k) v_sum += ws[k] * (zs[k] - mean) * (zs[k] - mean);
        const double var = v_sum / w_sum;

        worst = std::max(worst, std::abs(mean - (pc.a * u + pc.b * z_prev)));
        worst = std::max(worst, std::abs(var - pc.c));
    }
    CheckResult r;
    r.name = "posterior coefficients vs numerical Bayes oracle (" + std::to_string(pairs) + " pairs)";
    r.metric = worst;
    r.threshold = 1e-3;
    r.pass = worst < r.threshold;
    return r;
}

std::vector<CheckResult> mc_kl_checks(std::uint64_t seed) {
    struct Case {
        std::vector<real> u;
        double ab0;
    };
    const std::vector<Case> cases = {
        {{1, 0}, 0.5},
        {{0.3, -1.2, 0.8}, 0.2},
        {{2.0}, 0.05},
    };
    std::vector<CheckResult> out;
    constexpr std::size_t kSamples = 1000000;
    std::size_t ci = 0;
    for (const auto& c : cases) {
        const Tensor u(Shape{c.u.size()}, std::vector<real>(c.u));
        const double closed = gaussian_kl_to_standard(u, c.ab0);

        // direct Monte-Carlo estimate of E_q[log q - log p]
        RngStream s = make_stream(seed, "mc-kl", {ci});
        const double sa = std::sqrt(c.ab0), sn2 = 1.0 - c.ab0;
        double acc = 0;
        for (std::size_t k = 0; k < kSamples; ++k) {
            double logq = 0, logp = 0;
            for (std::size_t j = 0; j < c.u.size(); ++j) {
                const double mean = sa * static_cast<double>(u[j]);
                const double z = mean + std::sqrt(sn2) * s.normal();
                logq += log_normal_pdf(z, mean, sn2);
                logp += log_normal_pdf(z, 0.0, 1.0);
            }
            acc += logq - logp;
        }
        const double mc = acc / static_cast<double>(kSamples);
        CheckResult r;
        r.name = "closed-form KL vs 1e6-sample Monte-Carlo (case " + std::to_string(ci) + ")";
        r.metric = std::abs(mc - closed) / std::max(std::abs(closed), 1e-12);
        r.threshold = 0.01;
        r.pass = r.metric < r.threshold;
        r.note = "closed " + std::to_string(closed) + ", mc " + std::to_string(mc);
        out.push_back(r);
        ++ci;
    }
    return out;
}

CheckResult telescoping_check() {
    double worst = 0;
    for (std::size_t T : {2ul, 10ul, 64ul}) {
        const DiscreteSchedule sched = cosine_alpha_bar(T);
        double sum = 0;
        for (std::size_t t = 1; t <= T; ++t) sum += sched.snr_diff(t);
        worst = std::max(worst, std::abs(sum - (sched.snr(T) - sched.snr(0))));
    }
    CheckResult r;
    r.name = "telescoping sum of SNR differences";
    r.metric = worst;
    r.threshold = 1e-10;
    r.pass = worst < r.threshold;
    return r;
}

CheckResult unbiasedness_check(std::uint64_t seed) {
    const DatasetHandle blobs = synth_blobs(8, 2, 2, 10.0, seed + 3);
    TrainConfig cfg;
    cfg.method = Method::DT;
    cfg.T = 5;
    cfg.batch = 8;
    cfg.eta = 0.23;
    cfg.block = BlockConfig::mlp(8);
    cfg.seed = seed;
    ModelBundle bundle = ModelBundle::create(cfg, blobs);
        nudge_biases(bundle, seed + 107);

    const std::vector<std::size_t> idx{0, 3, 5, 8, 9, 12, 14, 15};
    const Tensor x = blobs.batch_images_flat(idx);
    const std::vector<int> y = blobs.batch_labels(idx);
    const std::size_t B = y.size();
    const std::size_t d = bundle.embed_dim();
    const auto& ab = bundle.sched.alpha_bar;

    // shared z_T stream across all t; per-t z_{t-1} streams
    const auto zT_stream = [&] { return make_stream(seed, "unbias-zT"); };

    double sampled_sum = 0;
    for (std::size_t t = 1; t <= cfg.T; ++t) {
        Graph g;
        const auto nodes = build_dt_loss(g, bundle, x, y, t, cfg.eta,
                                         make_stream(seed, "unbias-zp", {t}), zT_stream(), true);
        sampled_sum += static_cast<double>(g.value(nodes.total).item());
    }
    const double sampled_mean = sampled_sum / static_cast<double>(cfg.T);

    // independent full-sum evaluation in plain double arithmetic
    // cross-entropy on the same z_T draw
    RngStream zT = zT_stream();
    Tensor z_T(Shape{B, d});
    {
        const double sa = std::sqrt(ab[cfg.T]), sn = std::sqrt(1.0 - ab[cfg.T]);
        for (std::size_t i = 0; i < B; ++i) {
            const Tensor u = bundle.embed.embed(y[i]);
            for (std::size_t k = 0; k < d; ++k)
                z_T[i * d + k] = static_cast<real>(sa * static_cast<double>(u[k]) + sn * zT.normal());
        }
    }
    double ce = 0;
    {
        const Tensor& w = bundle.head.value(SoftmaxHead::kW);
        const Tensor& bb = bundle.head.value(SoftmaxHead::kB);
        const std::size_t m = bundle.num_classes();
        for (std::size_t i = 0; i < B; ++i) {
            std::vector<double> logits(m);
            for (std::size_t j = 0; j < m; ++j) {
                double acc = static_cast<double>(bb[j]);
                for (std::size_t k = 0; k < d; ++k)
                    acc += static_cast<double>(z_T[i * d + k]) * static_cast<double>(w[k * m + j]);
                logits[j] = acc;
            }
            double mx = logits[0];
            for (double v : logits) mx = std::max(mx, v);
            double lse = 0;
            for (double v : logits) lse += std::exp(v - mx);
            lse = mx + std::log(lse);
            ce -= logits[static_cast<std::size_t>(y[i])] - lse;
        }
        ce /= static_cast<double>(B);
    }
    double kl = 0;
    for (std::size_t i = 0; i < B; ++i) kl += gaussian_kl_to_standard(bundle.embed.embed(y[i]), ab[0]);
    kl /= static_cast<double>(B);

    double l2_sum = 0;
    for (std::size_t t = 1; t <= cfg.T; ++t) {
        RngStream zp = make_stream(seed, "unbias-zp", {t});
        Tensor z_prev(Shape{B, d});
        const double sa = std::sqrt(ab[t - 1]), sn = std::sqrt(1.0 - ab[t - 1]);
        for (std::size_t i = 0; i < B; ++i) {
            const Tensor u = bundle.embed.embed(y[i]);
            for (std::size_t k = 0; k < d; ++k)
                z_prev[i * d + k] =
                    static_cast<real>(sa * static_cast<double>(u[k]) + sn * zp.normal());
        }
        const Tensor u_hat =
            bundle.blocks[t - 1].forward(z_prev, x, 0.0, /*train=*/true, bundle.embed.rows());
        double mean_sq = 0;
        for (std::size_t i = 0; i < B; ++i) {
            const Tensor u = bundle.embed.embed(y[i]);
            double acc = 0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff =
                    static_cast<double>(u_hat[i * d + k]) - static_cast<double>(u[k]);
                acc += diff * diff;
            }
            mean_sq += acc;
        }
        mean_sq /= static_cast<double>(B);
        l2_sum += bundle.sched.snr_diff(t) * mean_sq;
    }
    const double full = ce + kl + 0.5 * cfg.eta * l2_sum;

    CheckResult r;
    r.name = "t-enumerated average of per-step loss equals full sum";
    r.metric = std::abs(sampled_mean - full);
    r.threshold = 1e-10;
    r.pass = r.metric < r.threshold;
    r.note = "mean " + std::to_string(sampled_mean) + ", full " + std::to_string(full);
    return r;
}

std::vector<CheckResult> run_all(std::uint64_t seed) {
    std::vector<CheckResult> out;
    auto prim = primitive_grad_checks(seed);
    out.insert(out.end(), prim.begin(), prim.end());
    auto blocks = block_grad_checks(seed);
    out.insert(out.end(), blocks.begin(), blocks.end());
    out.push_back(bayes_posterior_check(100, seed));
    auto kl = mc_kl_checks(seed);
    out.insert(out.end(), kl.begin(), kl.end());
    out.push_back(telescoping_check());
    out.push_back(unbiasedness_check(seed));
    return out;
}

}  // namespace noprop::checks
