#include "noprop/embedding.hpp"

#include <algorithm>
#include <cmath>

#include "noprop/errors.hpp"
#include "noprop/rng.hpp"

namespace noprop {

const char* embed_mode_name(EmbedMode mode) {
    switch (mode) {
        case EmbedMode::OneHotFixed: return "one-hot";
        case EmbedMode::LearnedDim: return "learned";
        case EmbedMode::Prototype: return "prototype";
    }
    return "?";
}

EmbedMode embed_mode_from_name(const std::string& name) {
    if (name == "one-hot") return EmbedMode::OneHotFixed;
    if (name == "learned") return EmbedMode::LearnedDim;
    if (name == "prototype") return EmbedMode::Prototype;
    throw ConfigError("unknown embedding mode '" + name + "'");
}

Tensor EmbeddingMatrix::embed(int y) const {
    if (y < 0 || static_cast<std::size_t>(y) >= m)
        throw RangeError("embed: class " + std::to_string(y) + " out of range [0," + std::to_string(m) +
                         ")");
    const Tensor& r = rows();
    Tensor out(Shape{d});
    for (std::size_t k = 0; k < d; ++k) out[k] = r[static_cast<std::size_t>(y) * d + k];
    return out;
}

NodeId EmbeddingMatrix::rows_node(Graph& g) const {
    if (trainable()) return graph_param(g, store, kEmbedTag, kName);
    return g.leaf_const(rows());
}

EmbeddingMatrix EmbeddingMatrix::one_hot(std::size_t m) {
    EmbeddingMatrix e;
    e.mode = EmbedMode::OneHotFixed;
    e.m = m;
    e.d = m;
    Tensor rows(Shape{m, m}, real(0));
    for (std::size_t i = 0; i < m; ++i) rows[i * m + i] = real(1);
    e.store.add(kName, std::move(rows), /*trainable=*/false);
    return e;
}

EmbeddingMatrix EmbeddingMatrix::learned(std::size_t m, std::size_t d, std::uint64_t seed) {
    EmbeddingMatrix e;
    e.mode = EmbedMode::LearnedDim;
    e.m = m;
    e.d = d;
    RngStream stream = make_stream(seed, "embed-init");
    Tensor rows = Tensor::randn(Shape{m, d}, stream);
    if (d >= m) {
        // Orthonormal rows via modified Gram-Schmidt on the Gaussian draw.
        for (std::size_t i = 0; i < m; ++i) {
            real* ri = rows.data() + i * d;
            for (std::size_t j = 0; j < i; ++j) {
                const real* rj = rows.data() + j * d;
                real proj = 0;
                for (std::size_t k = 0; k < d; ++k) proj += ri[k] * rj[k];
                for (std::size_t k = 0; k < d; ++k) ri[k] -= proj * rj[k];
            }
            real norm = 0;
            for (std::size_t k = 0; k < d; ++k) norm += ri[k] * ri[k];
            norm = std::sqrt(norm);
            for (std::size_t k = 0; k < d; ++k) ri[k] /= norm;
        }
    } else {
        const real scale = real(1) / std::sqrt(static_cast<real>(d));
        for (std::size_t i = 0; i < rows.numel(); ++i) rows[i] *= scale;
    }
    e.store.add(kName, std::move(rows), /*trainable=*/true);
    return e;
}

EmbeddingMatrix EmbeddingMatrix::prototype(const DatasetHandle& dataset) {
    dataset.validate();
    const std::size_t m = dataset.num_classes;
    const std::size_t dim = dataset.image_dim();

    EmbeddingMatrix e;
    e.mode = EmbedMode::Prototype;
    e.m = m;
    e.d = dim;
    Tensor rows(Shape{m, dim});

    for (std::size_t c = 0; c < m; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < dataset.n; ++i)
            if (dataset.labels[i] == static_cast<int>(c)) members.push_back(i);
        if (members.empty()) throw DataError("prototype init: class " + std::to_string(c) + " is empty");

        std::size_t best = members[0];
        double best_median = std::numeric_limits<double>::infinity();
        for (std::size_t i : members) {
            std::vector<double> dists;
            dists.reserve(members.size() - 1);
            const float* a = dataset.images.data() + i * dim;
            for (std::size_t j : members) {
                if (j == i) continue;
                const float* b = dataset.images.data() + j * dim;
                double acc = 0;
                for (std::size_t k = 0; k < dim; ++k) {
                    const double diff = static_cast<double>(a[k]) - static_cast<double>(b[k]);
                    acc += diff * diff;
                }
                dists.push_back(std::sqrt(acc));
            }
            double median = 0;
            if (!dists.empty()) {
                std::sort(dists.begin(), dists.end());
                const std::size_t h = dists.size() / 2;
                median = dists.size() % 2 ? dists[h] : 0.5 * (dists[h - 1] + dists[h]);
            }
            if (median < best_median) {  // strict: ties keep the lowest index
                best_median = median;
                best = i;
            }
        }
        const float* img = dataset.images.data() + best * dim;
        for (std::size_t k = 0; k < dim; ++k) rows[c * dim + k] = static_cast<real>(img[k]);
    }
    e.store.add(kName, std::move(rows), /*trainable=*/true);
    return e;
}

void SoftmaxHead::init_params(ParamStore& store, std::size_t d, std::size_t m, std::uint64_t seed) {
    RngStream stream = make_stream(seed, "head-init");
    store.add(kW, Tensor::randn(Shape{d, m}, stream, real(1) / std::sqrt(static_cast<real>(d))));
    store.add(kB, Tensor(Shape{m}, real(0)));
}

NodeId SoftmaxHead::logits(Graph& g, const ParamStore& store, const std::string& tag, NodeId z) {
    return g.linear(z, graph_param(g, store, tag, kW), graph_param(g, store, tag, kB));
}

Tensor SoftmaxHead::probs(const ParamStore& store, const Tensor& z) {
    Graph g;
    const NodeId zn = g.leaf_const(z);
    const NodeId p = g.softmax(logits(g, store, "head", zn));
    return g.value(p);
}

NodeId RadialHead::logits(Graph& g, const ParamStore& store, const std::string& tag, NodeId z,
                          NodeId embed_rows) const {
    if (!(sigma > 0)) throw ConfigError("radial head: sigma must be > 0");
    const NodeId f = SoftmaxHead::logits(g, store, tag, z);
    const NodeId y_tilde = g.linear(g.softmax(f), embed_rows);  // [B,d]
    const NodeId dist = g.pairwise_sqdist(y_tilde, embed_rows);  // [B,m]
    return g.scalar_mul(dist, static_cast<real>(-0.5 / (sigma * sigma)));
}

Tensor RadialHead::probs(const ParamStore& store, const EmbeddingMatrix& embed, const Tensor& z) const {
    Graph g;
    NodeId zn = g.leaf_const(z);
    if (z.rank() == 1) zn = g.reshape(zn, Shape{1, z.numel()});
    const NodeId p = g.softmax(logits(g, store, "head", zn, g.leaf_const(embed.rows())));
    const Tensor& out = g.value(p);
    if (z.rank() == 1) return Tensor(Shape{out.numel()}, out.vec());
    return out;
}

const char* head_kind_name(HeadKind kind) {
    return kind == HeadKind::Softmax ? "softmax" : "radial";
}

HeadKind head_kind_from_name(const std::string& name) {
    if (name == "softmax") return HeadKind::Softmax;
    if (name == "radial") return HeadKind::Radial;
    throw ConfigError("unknown head kind '" + name + "'");
}

}  // namespace noprop
