#include "noprop/trainer.hpp"

#include <chrono>
#include <cmath>

#include "noprop/errors.hpp"
#include "noprop/pool.hpp"

namespace noprop {

namespace {

struct Accum {
    double sum = 0;
    std::size_t n = 0;
    void add(double v) {
        sum += v;
        ++n;
    }
    double mean() const { return n ? sum / static_cast<double>(n) : MetricsRow::kAbsent; }
};

struct EpochStats {
    std::vector<Accum> block_l2;
    Accum ce, kl;
};

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& idx, std::size_t B) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t off = 0; off < idx.size(); off += B) {
        const std::size_t take = std::min(B, idx.size() - off);
        out.emplace_back(idx.begin() + off, idx.begin() + off + take);
    }
    return out;
}

Tensor batch_x(const DatasetHandle& ds, const std::vector<std::size_t>& idx, bool conv) {
    return conv ? ds.batch_images_nchw(idx) : ds.batch_images_flat(idx);
}

Tensor randn_tensor(const Shape& shape, RngStream& stream) {
    Tensor t(shape);
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<real>(stream.normal());
    return t;
}

// z = sqrt(ab) * u + sqrt(1 - ab) * eps as graph nodes (reparameterized).
NodeId marginal_node(Graph& g, NodeId u_y, double ab, RngStream& stream) {
    const Shape& bd = g.value(u_y).shape();
    Tensor eps(bd);
    for (std::size_t i = 0; i < eps.numel(); ++i) eps[i] = static_cast<real>(stream.normal());
    return g.add(g.scalar_mul(u_y, static_cast<real>(std::sqrt(ab))),
                 g.scalar_mul(g.leaf_const(std::move(eps)), static_cast<real>(std::sqrt(1.0 - ab))));
}

NodeId head_logits(Graph& g, ModelBundle& bundle, NodeId z, NodeId rows) {
    if (bundle.cfg.head == HeadKind::Radial) {
        RadialHead h{bundle.cfg.radial_sigma};
        return h.logits(g, bundle.head, kHeadTag, z, rows);
    }
    return SoftmaxHead::logits(g, bundle.head, kHeadTag, z);
}

void step_store(ParamStore& store, const GradMap& grads, const std::string& tag,
                const OptimizerConfig& opt) {
    const GradMap local = strip_prefix(grads, tag);
    if (!local.empty()) optimizer_step(store, local, opt);
}

}  // namespace

std::vector<std::size_t> epoch_shuffle(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    RngStream stream = make_stream(seed, "shuffle", {epoch});
    for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[stream.below(i + 1)]);
    return idx;
}

NodeId build_dt_l2_term(Graph& g, ModelBundle& bundle, NodeId rows, NodeId u_y, const Tensor& x,
                        std::size_t t, double eta, RngStream z_prev_stream, bool train) {
    const DiscreteSchedule& sched = bundle.sched;
    if (t < 1 || t > sched.T) throw RangeError("dt loss: t out of [1, T]");
    const NodeId z_prev = marginal_node(g, u_y, sched.alpha_bar[t - 1], z_prev_stream);
    const NodeId u_hat =
        bundle.blocks[t - 1].forward_output(g, "block", z_prev, g.leaf_const(x), -1, train, rows,
                                            make_stream(z_prev_stream.key(), "dropout"));
    const NodeId per_example = g.squared_l2(g.sub(u_hat, u_y));
    const double coeff = 0.5 * static_cast<double>(sched.T) * eta * sched.snr_diff(t);
    return g.scalar_mul(g.mean_reduce(per_example), static_cast<real>(coeff));
}

std::pair<NodeId, NodeId> build_dt_head_terms(Graph& g, ModelBundle& bundle, NodeId rows, NodeId u_y,
                                              const std::vector<int>& y, RngStream z_T_stream) {
    const DiscreteSchedule& sched = bundle.sched;
    const NodeId z_T = marginal_node(g, u_y, sched.alpha_bar[sched.T], z_T_stream);
    const NodeId ce = g.cross_entropy_logits(head_logits(g, bundle, z_T, rows), y);

    const double ab0 = sched.alpha_bar[0];
    const double d = static_cast<double>(bundle.embed_dim());
    NodeId kl;
    if (bundle.embed.trainable()) {
        const NodeId mean_sq = g.mean_reduce(g.squared_l2(u_y));
        const double constant = 0.5 * (d * (1.0 - ab0) - d - d * std::log(1.0 - ab0));
        kl = g.add(g.scalar_mul(mean_sq, static_cast<real>(0.5 * ab0)),
                   g.leaf_scalar(static_cast<real>(constant)));
    } else {
        double acc = 0;
        for (int yi : y) acc += gaussian_kl_to_standard(bundle.embed.embed(yi), ab0);
        kl = g.leaf_scalar(static_cast<real>(acc / static_cast<double>(y.size())));
    }
    return {ce, kl};
}

DtLossNodes build_dt_loss(Graph& g, ModelBundle& bundle, const Tensor& x, const std::vector<int>& y,
                          std::size_t t, double eta, RngStream z_prev_stream, RngStream z_T_stream,
                          bool train) {
    const NodeId rows = bundle.embed.rows_node(g);
    const NodeId u_y = g.embed_select(rows, y);
    DtLossNodes nodes;
    nodes.l2 = build_dt_l2_term(g, bundle, rows, u_y, x, t, eta, z_prev_stream, train);
    std::tie(nodes.ce, nodes.kl) = build_dt_head_terms(g, bundle, rows, u_y, y, z_T_stream);
    nodes.total = g.add(g.add(nodes.ce, nodes.kl), nodes.l2);
    return nodes;
}

CtLossNodes build_ct_loss(Graph& g, ModelBundle& bundle, const Tensor& x, const std::vector<int>& y,
                          const Tensor& t_batch, double eta, RngStream noise_stream, bool train) {
    const std::size_t B = y.size();
    const std::size_t d = bundle.embed_dim();
    if (t_batch.rank() != 2 || t_batch.extent(0) != B || t_batch.extent(1) != 1)
        throw ShapeError("ct loss: t batch must be [B,1], got " + shape_str(t_batch.shape()));

    const NodeId rows = bundle.embed.rows_node(g);
    const NodeId u_y = g.embed_select(rows, y);
    const NodeId tn = g.leaf_const(t_batch);

    const TrainableGamma gamma(bundle.schedule_params);
    const auto gn = gamma.build(g, kSchedTag, tn, B);

    const NodeId one11 = g.leaf_const(Tensor(Shape{1, 1}, real(1)));
    const NodeId sig_sqrt = g.sqrt(gn.alpha_bar);
    const NodeId noise_sqrt = g.sqrt(g.sub(one11, gn.alpha_bar));
    const NodeId eps = g.leaf_const(randn_tensor(Shape{B, d}, noise_stream));
    const NodeId z_t = g.add(g.mul(sig_sqrt, u_y), g.mul(noise_sqrt, eps));

    const NodeId u_hat = bundle.blocks[0].forward_output(g, "block", z_t, g.leaf_const(x), tn, train,
                                                         rows, make_stream(noise_stream.key(), "dropout"));
    const NodeId per_example = g.squared_l2(g.sub(u_hat, u_y));         // [B]
    const NodeId weights = g.reshape(gn.snr_prime, Shape{B});           // SNR'(t_i)
    CtLossNodes nodes;
    nodes.l2 = g.scalar_mul(g.mean_reduce(g.mul(weights, per_example)), static_cast<real>(0.5 * eta));

    // cross-entropy on a z_1 sample; alpha_bar(1) = sigmoid(-gamma0)
    const NodeId one = g.leaf_scalar(real(1));
    const NodeId ab1 = g.sigmoid(g.scalar_mul(gn.g0, real(-1)));
    const NodeId eps2 = g.leaf_const(randn_tensor(Shape{B, d}, noise_stream));
    const NodeId z_1 = g.add(g.mul(g.sqrt(ab1), u_y), g.mul(g.sqrt(g.sub(one, ab1)), eps2));
    nodes.ce = g.cross_entropy_logits(head_logits(g, bundle, z_1, rows), y);

    // prior KL; alpha_bar(0) = sigmoid(-gamma1)
    const double dd = static_cast<double>(d);
    const NodeId ab0 = g.sigmoid(g.scalar_mul(gn.g1, real(-1)));
    const NodeId mean_sq = g.mean_reduce(g.squared_l2(u_y));
    const NodeId one_minus = g.sub(one, ab0);
    const NodeId kl_inner =
        g.add(g.add(g.mul(ab0, mean_sq), g.scalar_mul(one_minus, static_cast<real>(dd))),
              g.add(g.leaf_scalar(static_cast<real>(-dd)),
                    g.scalar_mul(g.log(one_minus), static_cast<real>(-dd))));
    nodes.kl = g.scalar_mul(kl_inner, real(0.5));

    nodes.total = g.add(g.add(nodes.ce, nodes.kl), nodes.l2);
    return nodes;
}

FmLossNodes build_fm_loss_with_field(Graph& g, ModelBundle& bundle, const FlowField& field,
                                     const Tensor& x, const std::vector<int>& y,
                                     const Tensor& t_batch, double sigma, RngStream noise_stream,
                                     bool anchored) {
    if (!(sigma > 0)) throw ConfigError("fm loss: sigma must be > 0");
    const std::size_t B = y.size();
    const std::size_t d = bundle.embed_dim();
    if (t_batch.rank() != 2 || t_batch.extent(0) != B || t_batch.extent(1) != 1)
        throw ShapeError("fm loss: t batch must be [B,1], got " + shape_str(t_batch.shape()));

    const NodeId rows = bundle.embed.rows_node(g);
    const NodeId z_1 = g.embed_select(rows, y);  // clean target u_y
    const NodeId z_0 = g.leaf_const(randn_tensor(Shape{B, d}, noise_stream));
    const NodeId eps = g.leaf_const(randn_tensor(Shape{B, d}, noise_stream));
    const NodeId tn = g.leaf_const(t_batch);
    const NodeId one11 = g.leaf_const(Tensor(Shape{1, 1}, real(1)));
    const NodeId one_minus_t = g.sub(one11, tn);

    const NodeId path_mean = g.add(g.mul(tn, z_1), g.mul(one_minus_t, z_0));
    const NodeId z_t = g.add(path_mean, g.scalar_mul(eps, static_cast<real>(sigma)));

    const NodeId xn = g.leaf_const(x);
    const NodeId v = field(g, FmPath{z_t, xn, tn, rows, z_0, z_1});
    const NodeId target = g.sub(z_1, z_0);

    FmLossNodes nodes;
    nodes.base = g.mean_reduce(g.squared_l2(g.sub(v, target)));
    nodes.anchor = -1;
    nodes.anchored = anchored;
    if (anchored) {
        const NodeId z_tilde = g.add(z_t, g.mul(one_minus_t, v));  // extrapolated estimate of z_1
        nodes.anchor = g.cross_entropy_logits(head_logits(g, bundle, z_tilde, rows), y);
        nodes.total = g.add(nodes.base, nodes.anchor);
    } else {
        nodes.total = nodes.base;
    }
    return nodes;
}

FmLossNodes build_fm_loss(Graph& g, ModelBundle& bundle, const Tensor& x, const std::vector<int>& y,
                          const Tensor& t_batch, RngStream noise_stream, bool train) {
    const FlowField block_field = [&bundle, train, &noise_stream](Graph& gg, const FmPath& path) {
        return bundle.blocks[0].forward_output(gg, "block", path.z_t, path.x, path.t, train,
                                               path.rows, make_stream(noise_stream.key(), "dropout"));
    };
    return build_fm_loss_with_field(g, bundle, block_field, x, y, t_batch, bundle.cfg.fm_sigma,
                                    noise_stream, bundle.embed.trainable());
}

NodeId build_backprop_loss(Graph& g, ModelBundle& bundle, const Tensor& x, const std::vector<int>& y,
                           RngStream z0_stream, bool train) {
    const std::size_t B = y.size();
    const std::size_t d = bundle.embed_dim();
    const NodeId rows = bundle.embed.rows_node(g);
    const NodeId xn = g.leaf_const(x);
    const NodeId w = graph_param(g, bundle.baseline, kBaseTag, "w");  // [T,1]
    const NodeId one11 = g.leaf_const(Tensor(Shape{1, 1}, real(1)));

    NodeId z = g.leaf_const(randn_tensor(Shape{B, d}, z0_stream));
    for (std::size_t t = 1; t <= bundle.blocks.size(); ++t) {
        const NodeId alpha = g.tanh(g.embed_select(w, {static_cast<int>(t - 1)}));  // [1,1]
        const NodeId u_hat =
            bundle.blocks[t - 1].forward_output(g, "b" + std::to_string(t), z, xn, -1, train, rows,
                                                make_stream(z0_stream.key(), "dropout", {t}));
        z = g.add(g.mul(g.sub(one11, alpha), z), g.mul(alpha, u_hat));
    }
    return g.cross_entropy_logits(head_logits(g, bundle, z, rows), y);
}

namespace {

// ---- epoch drivers ----

void dt_epoch_sequential(ModelBundle& bundle, const DatasetHandle& ds, std::size_t epoch,
                         EpochStats& stats, std::size_t& peak) {
    const TrainConfig& cfg = bundle.cfg;
    const bool conv = cfg.block.arch == BlockArch::Conv;
    const auto batches = chunk(epoch_shuffle(ds.n, cfg.seed, epoch), cfg.batch);
    for (std::size_t t = 1; t <= cfg.T; ++t) {
        for (std::size_t bi = 0; bi < batches.size(); ++bi) {
            const Tensor x = batch_x(ds, batches[bi], conv);
            const auto y = ds.batch_labels(batches[bi]);
            Graph g;
            const auto nodes = build_dt_loss(g, bundle, x, y, t, cfg.eta,
                                             make_stream(cfg.seed, "dt-zprev", {t, epoch, bi}),
                                             make_stream(cfg.seed, "dt-zT", {t, epoch, bi}), true);
            peak = std::max(peak, g.num_nodes());
            const GradMap grads = g.backward(nodes.total);
            step_store(bundle.blocks[t - 1].params(), grads, "block", cfg.optimizer);
            step_store(bundle.head, grads, kHeadTag, cfg.optimizer);
            if (bundle.embed.trainable()) step_store(bundle.embed.store, grads, kEmbedTag, cfg.optimizer);
            stats.block_l2[t - 1].add(g.value(nodes.l2).item());
            stats.ce.add(g.value(nodes.ce).item());
            stats.kl.add(g.value(nodes.kl).item());
        }
    }
}

void dt_epoch_parallel(ModelBundle& bundle, const DatasetHandle& ds, std::size_t epoch,
                       EpochStats& stats, std::size_t& peak) {
    const TrainConfig& cfg = bundle.cfg;
    if (bundle.embed.trainable())
        throw ConfigError("parallel training requires fixed one-hot embeddings");
    const bool conv = cfg.block.arch == BlockArch::Conv;
    const auto batches = chunk(epoch_shuffle(ds.n, cfg.seed, epoch), cfg.batch);

    std::vector<std::size_t> peaks(cfg.T + 1, 0);
    std::vector<std::function<void()>> jobs;
    for (std::size_t t = 1; t <= cfg.T; ++t) {
        jobs.push_back([&, t] {
            for (std::size_t bi = 0; bi < batches.size(); ++bi) {
                const Tensor x = batch_x(ds, batches[bi], conv);
                const auto y = ds.batch_labels(batches[bi]);
                Graph g;
                const NodeId rows = bundle.embed.rows_node(g);
                const NodeId u_y = g.embed_select(rows, y);
                const NodeId l2 = build_dt_l2_term(g, bundle, rows, u_y, x, t, cfg.eta,
                                                   make_stream(cfg.seed, "dt-zprev", {t, epoch, bi}),
                                                   true);
                peaks[t] = std::max(peaks[t], g.num_nodes());
                const GradMap grads = g.backward(l2);
                step_store(bundle.blocks[t - 1].params(), grads, "block", cfg.optimizer);
                stats.block_l2[t - 1].add(g.value(l2).item());
            }
        });
    }
    jobs.push_back([&] {
        // The head replays the same (t, batch) schedule as the sequential run.
        for (std::size_t t = 1; t <= cfg.T; ++t) {
            for (std::size_t bi = 0; bi < batches.size(); ++bi) {
                const auto y = ds.batch_labels(batches[bi]);
                Graph g;
                const NodeId rows = bundle.embed.rows_node(g);
                const NodeId u_y = g.embed_select(rows, y);
                const auto [ce, kl] =
                    build_dt_head_terms(g, bundle, rows, u_y, y,
                                        make_stream(cfg.seed, "dt-zT", {t, epoch, bi}));
                const NodeId loss = g.add(ce, kl);
                peaks[0] = std::max(peaks[0], g.num_nodes());
                const GradMap grads = g.backward(loss);
                step_store(bundle.head, grads, kHeadTag, cfg.optimizer);
                stats.ce.add(g.value(ce).item());
                stats.kl.add(g.value(kl).item());
            }
        }
    });

    const auto errors = run_jobs(jobs, cfg.workers);
    if (!errors.empty()) {
        std::string msg = "parallel training failed:";
        for (const auto& e : errors)
            msg += " [job " + std::to_string(e.job) + "] " + e.message + ";";
        throw Error(msg);
    }
    for (std::size_t p : peaks) peak = std::max(peak, p);
}

void ct_epoch(ModelBundle& bundle, const DatasetHandle& ds, std::size_t epoch, EpochStats& stats,
              std::size_t& peak) {
    const TrainConfig& cfg = bundle.cfg;
    const bool conv = cfg.block.arch == BlockArch::Conv;
    const auto batches = chunk(epoch_shuffle(ds.n, cfg.seed, epoch), cfg.batch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const Tensor x = batch_x(ds, batches[bi], conv);
        const auto y = ds.batch_labels(batches[bi]);
        RngStream t_stream = make_stream(cfg.seed, "ct-t", {epoch, bi});
        Tensor t_batch(Shape{y.size(), 1});
        for (std::size_t i = 0; i < y.size(); ++i) t_batch[i] = static_cast<real>(t_stream.uniform());
        Graph g;
        const auto nodes = build_ct_loss(g, bundle, x, y, t_batch, cfg.eta,
                                         make_stream(cfg.seed, "ct-noise", {epoch, bi}), true);
        peak = std::max(peak, g.num_nodes());
        const GradMap grads = g.backward(nodes.total);
        step_store(bundle.blocks[0].params(), grads, "block", cfg.optimizer);
        step_store(bundle.head, grads, kHeadTag, cfg.optimizer);
        step_store(bundle.schedule_params, grads, kSchedTag, cfg.optimizer);
        if (bundle.embed.trainable()) step_store(bundle.embed.store, grads, kEmbedTag, cfg.optimizer);
        stats.block_l2[0].add(g.value(nodes.l2).item());
        stats.ce.add(g.value(nodes.ce).item());
        stats.kl.add(g.value(nodes.kl).item());
    }
}

void fm_epoch(ModelBundle& bundle, const DatasetHandle& ds, std::size_t epoch, EpochStats& stats,
              std::size_t& peak) {
    const TrainConfig& cfg = bundle.cfg;
    const bool conv = cfg.block.arch == BlockArch::Conv;
    const auto batches = chunk(epoch_shuffle(ds.n, cfg.seed, epoch), cfg.batch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const Tensor x = batch_x(ds, batches[bi], conv);
        const auto y = ds.batch_labels(batches[bi]);
        RngStream t_stream = make_stream(cfg.seed, "fm-t", {epoch, bi});
        Tensor t_batch(Shape{y.size(), 1});
        for (std::size_t i = 0; i < y.size(); ++i) t_batch[i] = static_cast<real>(t_stream.uniform());
        Graph g;
        const auto nodes = build_fm_loss(g, bundle, x, y, t_batch,
                                         make_stream(cfg.seed, "fm-noise", {epoch, bi}), true);
        peak = std::max(peak, g.num_nodes());
        const GradMap grads = g.backward(nodes.total);
        step_store(bundle.blocks[0].params(), grads, "block", cfg.optimizer);
        if (nodes.anchored) {
            step_store(bundle.head, grads, kHeadTag, cfg.optimizer);
            step_store(bundle.embed.store, grads, kEmbedTag, cfg.optimizer);
        }
        stats.block_l2[0].add(g.value(nodes.base).item());
        if (nodes.anchored) stats.ce.add(g.value(nodes.anchor).item());
    }
}

void backprop_epoch(ModelBundle& bundle, const DatasetHandle& ds, std::size_t epoch,
                    EpochStats& stats, std::size_t& peak) {
    const TrainConfig& cfg = bundle.cfg;
    const bool conv = cfg.block.arch == BlockArch::Conv;
    const auto batches = chunk(epoch_shuffle(ds.n, cfg.seed, epoch), cfg.batch);
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
        const Tensor x = batch_x(ds, batches[bi], conv);
        const auto y = ds.batch_labels(batches[bi]);
        Graph g;
        const NodeId loss =
            build_backprop_loss(g, bundle, x, y, make_stream(cfg.seed, "bp-z0", {epoch, bi}), true);
        peak = std::max(peak, g.num_nodes());
        const GradMap grads = g.backward(loss);
        for (std::size_t t = 1; t <= bundle.blocks.size(); ++t)
            step_store(bundle.blocks[t - 1].params(), grads, "b" + std::to_string(t), cfg.optimizer);
        step_store(bundle.head, grads, kHeadTag, cfg.optimizer);
        step_store(bundle.baseline, grads, kBaseTag, cfg.optimizer);
        if (bundle.embed.trainable()) step_store(bundle.embed.store, grads, kEmbedTag, cfg.optimizer);
        stats.ce.add(g.value(loss).item());
    }
}

}  // namespace

TrainResult train_range(ModelBundle& bundle, const DatasetHandle& train_ds,
                        const DatasetHandle* test_ds, MetricsWriter* metrics, std::size_t epoch_begin,
                        std::size_t epoch_end) {
    const TrainConfig& cfg = bundle.cfg;
    cfg.validate();
    train_ds.validate();
    if (cfg.parallel && cfg.method != Method::DT)
        throw ConfigError("parallel training is only defined for dt");

    TrainResult result;
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        if (!cfg.wall_clock) return 0.0;
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };

    InferenceConfig eval_cfg;
    eval_cfg.steps = std::min<std::size_t>(cfg.inference_steps, 100);

    for (std::size_t epoch = epoch_begin; epoch < epoch_end; ++epoch) {
        EpochStats stats;
        stats.block_l2.resize(bundle.blocks.size());

        switch (cfg.method) {
            case Method::DT:
                if (cfg.parallel)
                    dt_epoch_parallel(bundle, train_ds, epoch, stats, result.peak_live_nodes);
                else
                    dt_epoch_sequential(bundle, train_ds, epoch, stats, result.peak_live_nodes);
                break;
            case Method::CT: ct_epoch(bundle, train_ds, epoch, stats, result.peak_live_nodes); break;
            case Method::FM: fm_epoch(bundle, train_ds, epoch, stats, result.peak_live_nodes); break;
            case Method::Backprop:
                backprop_epoch(bundle, train_ds, epoch, stats, result.peak_live_nodes);
                break;
        }
        bundle.trained = true;
        bundle.epochs_completed = epoch + 1;

        const double now = elapsed();
        if (cfg.method == Method::DT) {
            for (std::size_t t = 0; t < bundle.blocks.size(); ++t) {
                MetricsRow row;
                row.wall_clock_s = now;
                row.epoch = epoch;
                row.block = std::to_string(t + 1);
                row.l2 = stats.block_l2[t].mean();
                result.rows.push_back(row);
            }
            MetricsRow head_row;
            head_row.wall_clock_s = now;
            head_row.epoch = epoch;
            head_row.block = "head";
            head_row.ce = stats.ce.mean();
            head_row.kl = stats.kl.mean();
            result.rows.push_back(head_row);
        } else {
            MetricsRow row;
            row.wall_clock_s = now;
            row.epoch = epoch;
            row.block = bundle.blocks.size() == 1 ? "1" : "all";
            row.ce = stats.ce.mean();
            row.kl = stats.kl.mean();
            row.l2 = stats.block_l2.empty() ? MetricsRow::kAbsent : stats.block_l2[0].mean();
            result.rows.push_back(row);
        }

        MetricsRow summary;
        summary.wall_clock_s = elapsed();
        summary.epoch = epoch;
        summary.block = "all";
        summary.peak_live_nodes = result.peak_live_nodes;
        if (cfg.eval_each_epoch || epoch + 1 == epoch_end) {
            summary.train_acc =
                evaluate_accuracy(bundle, train_ds, eval_cfg, cfg.seed, cfg.eval_train_max);
            if (test_ds)
                summary.test_acc = evaluate_accuracy(bundle, *test_ds, eval_cfg, cfg.seed, 0);
        }
        result.final_train_acc = summary.train_acc;
        result.final_test_acc = summary.test_acc;
        result.rows.push_back(summary);

        if (metrics) {
            const std::size_t emitted = result.rows.size();
            const std::size_t per_epoch =
                (cfg.method == Method::DT ? bundle.blocks.size() + 1 : 1) + 1;
            for (std::size_t i = emitted - per_epoch; i < emitted; ++i) metrics->row(result.rows[i]);
            metrics->flush();
        }
    }

    // Final accuracy at the full inference step count.
    if (epoch_end > epoch_begin) {
        InferenceConfig final_cfg;
        final_cfg.steps = cfg.inference_steps;
        result.final_train_acc =
            evaluate_accuracy(bundle, train_ds, final_cfg, cfg.seed, cfg.eval_train_max);
        if (test_ds) result.final_test_acc = evaluate_accuracy(bundle, *test_ds, final_cfg, cfg.seed, 0);
    }
    return result;
}

TrainResult train(ModelBundle& bundle, const DatasetHandle& train_ds, const DatasetHandle* test_ds,
                  MetricsWriter* metrics) {
    return train_range(bundle, train_ds, test_ds, metrics, bundle.epochs_completed,
                       bundle.cfg.epochs);
}

std::size_t probe_peak_live_nodes(Method method, std::size_t T) {
    DatasetHandle ds = synth_blobs(8, 2, 2, 10.0, 1);
    TrainConfig cfg;
    cfg.method = method;
    cfg.T = T;
    cfg.batch = 8;
    cfg.epochs = 1;
    cfg.block = BlockConfig::mlp(16);
    cfg.eval_each_epoch = false;
    cfg.eval_train_max = 8;
    apply_method_defaults(cfg);
    ModelBundle bundle = ModelBundle::create(cfg, ds);
    const TrainResult r = train(bundle, ds, nullptr, nullptr);
    return r.peak_live_nodes;
}

}  // namespace noprop
