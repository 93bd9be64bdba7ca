#include "noprop/blocks.hpp"

#include <cmath>

#include "noprop/errors.hpp"
#include "noprop/rng.hpp"

namespace noprop {

namespace {

Tensor he_init(Shape shape, std::size_t fan_in, RngStream& stream) {
    return Tensor::randn(std::move(shape), stream,
                         static_cast<real>(std::sqrt(2.0 / static_cast<double>(fan_in))));
}

}  // namespace

DenoiseBlock::DenoiseBlock(Variant variant, BlockConfig cfg, std::size_t m, std::size_t d,
                           std::size_t img_c, std::size_t img_h, std::size_t img_w)
    : variant_(variant), cfg_(cfg), m_(m), d_(d), img_c_(img_c), img_h_(img_h), img_w_(img_w) {
    if (variant_ != Variant::DiscreteTime) cfg_.batchnorm = false;
}

bool DenoiseBlock::label_as_image() const {
    return cfg_.arch == BlockArch::Conv && d_ == img_c_ * img_h_ * img_w_;
}

void DenoiseBlock::init_conv_stack(const std::string& prefix, std::size_t in_c, std::size_t h,
                                   std::size_t w, RngStream& stream) {
    const std::size_t c1 = cfg_.conv1_channels, c2 = cfg_.conv2_channels;
    params_.add(prefix + ".conv1.w", he_init(Shape{c1, in_c, 3, 3}, in_c * 9, stream));
    params_.add(prefix + ".conv1.b", Tensor(Shape{c1}, real(0)));
    if (cfg_.batchnorm) {
        params_.add(prefix + ".bn1.g", Tensor(Shape{c1}, real(1)));
        params_.add(prefix + ".bn1.b", Tensor(Shape{c1}, real(0)));
        params_.add(prefix + ".bn1.rm", Tensor(Shape{c1}, real(0)), false);
        params_.add(prefix + ".bn1.rv", Tensor(Shape{c1}, real(1)), false);
    }
    params_.add(prefix + ".conv2.w", he_init(Shape{c2, c1, 3, 3}, c1 * 9, stream));
    params_.add(prefix + ".conv2.b", Tensor(Shape{c2}, real(0)));
    if (cfg_.batchnorm) {
        params_.add(prefix + ".bn2.g", Tensor(Shape{c2}, real(1)));
        params_.add(prefix + ".bn2.b", Tensor(Shape{c2}, real(0)));
        params_.add(prefix + ".bn2.rm", Tensor(Shape{c2}, real(0)), false);
        params_.add(prefix + ".bn2.rv", Tensor(Shape{c2}, real(1)), false);
    }
    // conv (k=3, p=0) then 2x2/2 max-pool, twice
    auto conv_pool = [](std::size_t n) { return (n - 2 - 2) / 2 + 1; };
    const std::size_t h2 = conv_pool(conv_pool(h)), w2 = conv_pool(conv_pool(w));
    const std::size_t flat = c2 * h2 * w2;
    init_fc(prefix + ".fc", flat, cfg_.feat_width, stream, cfg_.batchnorm);
}

void DenoiseBlock::init_fc(const std::string& prefix, std::size_t in, std::size_t out,
                           RngStream& stream, bool with_bn) {
    params_.add(prefix + ".w", he_init(Shape{in, out}, in, stream));
    params_.add(prefix + ".b", Tensor(Shape{out}, real(0)));
    if (with_bn) {
        params_.add(prefix + ".bn.g", Tensor(Shape{out}, real(1)));
        params_.add(prefix + ".bn.b", Tensor(Shape{out}, real(0)));
        params_.add(prefix + ".bn.rm", Tensor(Shape{out}, real(0)), false);
        params_.add(prefix + ".bn.rv", Tensor(Shape{out}, real(1)), false);
    }
}

void DenoiseBlock::init_params(std::uint64_t seed) {
    RngStream stream = make_stream(seed, "block-init");
    if (cfg_.arch == BlockArch::Conv) {
        init_conv_stack("img", img_c_, img_h_, img_w_, stream);
        if (label_as_image())
            init_conv_stack("lab", img_c_, img_h_, img_w_, stream);
        else {
            init_fc("lab.fc1", d_, cfg_.feat_width, stream, cfg_.batchnorm);
            init_fc("lab.fc2", cfg_.feat_width, cfg_.feat_width, stream, cfg_.batchnorm);
        }
    } else {
        init_fc("img.fc1", img_c_ * img_h_ * img_w_, cfg_.feat_width, stream, cfg_.batchnorm);
        init_fc("lab.fc1", d_, cfg_.feat_width, stream, cfg_.batchnorm);
        init_fc("lab.fc2", cfg_.feat_width, cfg_.feat_width, stream, cfg_.batchnorm);
    }
    std::size_t fused = 2 * cfg_.feat_width;
    if (has_time()) {
        init_fc("time.fc", cfg_.time_embed_dim, cfg_.time_feat_width, stream, false);
        fused += cfg_.time_feat_width;
    }
    init_fc("fuse.fc1", fused, cfg_.fusion_width, stream, cfg_.batchnorm);
    init_fc("fuse.fc2", cfg_.fusion_width, cfg_.fusion_width, stream, cfg_.batchnorm);
    params_.add("fuse.out.w", he_init(Shape{cfg_.fusion_width, m_}, cfg_.fusion_width, stream));
    params_.add("fuse.out.b", Tensor(Shape{m_}, real(0)));
}

NodeId DenoiseBlock::bn(Graph& g, const std::string& tag, const std::string& prefix, NodeId x,
                        bool train) {
    const NodeId gamma = graph_param(g, params_, tag, prefix + ".g");
    const NodeId beta = graph_param(g, params_, tag, prefix + ".b");
    if (train) {
        const NodeId y = g.batchnorm_train(x, gamma, beta);
        // refresh running stats from the batch statistics saved on the node
        const auto& aux = g.node(y).aux;  // {xhat, inv_std, mean, var}
        Tensor& rm = params_.value(prefix + ".rm");
        Tensor& rv = params_.value(prefix + ".rv");
        constexpr real kMomentum = real(0.1);
        for (std::size_t i = 0; i < rm.numel(); ++i) {
            rm[i] = (real(1) - kMomentum) * rm[i] + kMomentum * aux[2][i];
            rv[i] = (real(1) - kMomentum) * rv[i] + kMomentum * aux[3][i];
        }
        return y;
    }
    const NodeId rm = g.leaf_const(params_.value(prefix + ".rm"));
    const NodeId rv = g.leaf_const(params_.value(prefix + ".rv"));
    return g.batchnorm_eval(x, gamma, beta, rm, rv);
}

NodeId DenoiseBlock::fc_bn_relu(Graph& g, const std::string& tag, const std::string& prefix, NodeId x,
                                bool train) {
    NodeId h = g.linear(x, graph_param(g, params_, tag, prefix + ".w"),
                        graph_param(g, params_, tag, prefix + ".b"));
    if (cfg_.batchnorm) h = bn(g, tag, prefix + ".bn", h, train);
    return g.relu(h);
}

NodeId DenoiseBlock::conv_stack(Graph& g, const std::string& tag, const std::string& prefix, NodeId x,
                                bool train, RngStream stream) {
    NodeId h = g.conv2d(x, graph_param(g, params_, tag, prefix + ".conv1.w"),
                        graph_param(g, params_, tag, prefix + ".conv1.b"));
    if (cfg_.batchnorm) h = bn(g, tag, prefix + ".bn1", h, train);
    h = g.max_pool2d(g.relu(h), 2);
    h = g.conv2d(h, graph_param(g, params_, tag, prefix + ".conv2.w"),
                 graph_param(g, params_, tag, prefix + ".conv2.b"));
    if (cfg_.batchnorm) h = bn(g, tag, prefix + ".bn2", h, train);
    h = g.max_pool2d(g.relu(h), 2);
    if (cfg_.dropout_p > 0.0) h = g.dropout(h, 1.0 - cfg_.dropout_p, train, stream);
    const Shape& s = g.value(h).shape();
    h = g.reshape(h, Shape{s[0], s[1] * s[2] * s[3]});
    return fc_bn_relu(g, tag, prefix + ".fc", h, train);
}

NodeId DenoiseBlock::image_pathway(Graph& g, const std::string& tag, NodeId x, bool train,
                                   RngStream stream) {
    if (cfg_.arch == BlockArch::Conv) return conv_stack(g, tag, "img", x, train, stream);
    return fc_bn_relu(g, tag, "img.fc1", x, train);
}

NodeId DenoiseBlock::label_pathway(Graph& g, const std::string& tag, NodeId z, bool train) {
    const NodeId h1 = fc_bn_relu(g, tag, "lab.fc1", z, train);
    const NodeId h2 = fc_bn_relu(g, tag, "lab.fc2", h1, train);
    return g.add(h1, h2);  // skip connection
}

NodeId DenoiseBlock::forward_logits(Graph& g, const std::string& tag, NodeId z, NodeId x, NodeId t,
                                    bool train, RngStream stream) {
    const NodeId img_feat = image_pathway(g, tag, x, train, stream);
    NodeId lab_feat;
    if (label_as_image()) {
        const std::size_t B = g.value(z).extent(0);
        lab_feat = conv_stack(g, tag, "lab", g.reshape(z, Shape{B, img_c_, img_h_, img_w_}), train,
                              make_stream(stream.key(), "lab-drop"));
    } else {
        lab_feat = label_pathway(g, tag, z, train);
    }
    std::vector<NodeId> feats{img_feat, lab_feat};
    if (has_time()) {
        if (t < 0) throw ContractError("continuous block requires a time node");
        const NodeId emb = g.time_embedding(t, static_cast<int>(cfg_.time_embed_dim));
        feats.push_back(g.relu(g.linear(emb, graph_param(g, params_, tag, "time.fc.w"),
                                        graph_param(g, params_, tag, "time.fc.b"))));
    }
    NodeId h = g.concat(feats, 1);
    h = fc_bn_relu(g, tag, "fuse.fc1", h, train);
    h = fc_bn_relu(g, tag, "fuse.fc2", h, train);
    return g.linear(h, graph_param(g, params_, tag, "fuse.out.w"),
                    graph_param(g, params_, tag, "fuse.out.b"));
}

NodeId DenoiseBlock::forward_output(Graph& g, const std::string& tag, NodeId z, NodeId x, NodeId t,
                                    bool train, NodeId embed_rows, RngStream stream) {
    const NodeId logits = forward_logits(g, tag, z, x, t, train, stream);
    if (variant_ == Variant::Flow) return g.linear(logits, embed_rows);
    return g.linear(g.softmax(logits), embed_rows);
}

Tensor DenoiseBlock::forward(const Tensor& z, const Tensor& x, double t, bool train,
                             const Tensor& embed_rows) {
    Graph g;
    const bool batched = z.rank() == 2;
    const std::size_t B = batched ? z.extent(0) : 1;
    NodeId zn = g.leaf_const(z);
    if (!batched) zn = g.reshape(zn, Shape{1, z.numel()});
    NodeId xn = g.leaf_const(x);
    if (cfg_.arch == BlockArch::Conv && x.rank() == 3)
        xn = g.reshape(xn, Shape{1, x.extent(0), x.extent(1), x.extent(2)});
    else if (cfg_.arch == BlockArch::Mlp && x.rank() == 1)
        xn = g.reshape(xn, Shape{1, x.numel()});
    NodeId tn = -1;
    if (has_time()) tn = g.leaf_const(Tensor(Shape{B, 1}, static_cast<real>(t)));
    const NodeId out =
        forward_output(g, "block", zn, xn, tn, train, g.leaf_const(embed_rows), make_stream(0, "drop"));
    const Tensor& v = g.value(out);
    if (!batched) return Tensor(Shape{v.numel()}, v.vec());
    return v;
}

}  // namespace noprop
