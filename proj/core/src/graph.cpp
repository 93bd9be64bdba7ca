#include "noprop/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_map>
#include <unordered_set>

#include "noprop/errors.hpp"

namespace noprop {

namespace {

constexpr double kLogMaxFreq = 9.210340371976184;  // ln(10000)

struct NamePair {
    const char* name;
    Op op;
};

constexpr NamePair kOpNames[] = {
    {"leaf-param", Op::LeafParam},
    {"leaf-const", Op::LeafConst},
    {"linear", Op::Linear},
    {"conv2d", Op::Conv2d},
    {"relu", Op::Relu},
    {"batchnorm", Op::BatchNorm},
    {"softmax", Op::Softmax},
    {"log-softmax", Op::LogSoftmax},
    {"concat", Op::Concat},
    {"add", Op::Add},
    {"scalar-mul", Op::ScalarMul},
    {"elementwise-mul", Op::Mul},
    {"sum-reduce", Op::SumReduce},
    {"mean-reduce", Op::MeanReduce},
    {"squared-l2", Op::SquaredL2},
    {"cross-entropy-from-logits", Op::CrossEntropyLogits},
    {"sinusoidal-time-embedding", Op::TimeEmbedding},
    {"max-pool2d", Op::MaxPool2d},
    {"dropout", Op::Dropout},
    {"reshape", Op::Reshape},
    {"embed-select", Op::EmbedSelect},
    {"pairwise-sqdist", Op::PairwiseSqDist},
    {"exp", Op::Exp},
    {"log", Op::Log},
    {"sqrt", Op::Sqrt},
    {"sigmoid", Op::Sigmoid},
    {"softplus", Op::Softplus},
    {"reciprocal", Op::Reciprocal},
    {"tanh", Op::Tanh},
};

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(ea, eb);
    }
    return out;
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

// Strides of `s` embedded in broadcast shape `out`: 0 on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
    std::vector<std::size_t> st(out.size(), 0);
    auto own = row_major_strides(s);
    const std::size_t off = out.size() - s.size();
    for (std::size_t i = 0; i < s.size(); ++i)
        if (s[i] != 1) st[off + i] = own[i];
    return st;
}

template <typename F>
Tensor broadcast_binary(const Tensor& a, const Tensor& b, F f) {
    if (a.same_shape(b)) {  // fast path
        Tensor out(a.shape());
        for (std::size_t i = 0; i < a.numel(); ++i) out[i] = f(a[i], b[i]);
        return out;
    }
    const Shape os = broadcast_shape(a.shape(), b.shape());
    Tensor out(os);
    const auto sa = broadcast_strides(a.shape(), os);
    const auto sb = broadcast_strides(b.shape(), os);
    const auto so = row_major_strides(os);
    const std::size_t n = out.numel();
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t rem = flat, ia = 0, ib = 0;
        for (std::size_t d = 0; d < os.size(); ++d) {
            const std::size_t idx = rem / so[d];
            rem %= so[d];
            ia += idx * sa[d];
            ib += idx * sb[d];
        }
        out[flat] = f(a[ia], b[ib]);
    }
    return out;
}

// Sum `t` down to `target` shape (inverse of broadcasting).
Tensor reduce_to_shape(const Tensor& t, const Shape& target) {
    if (t.shape() == target) return t;
    Tensor out(target, real(0));
    const auto st = broadcast_strides(target, t.shape());
    const auto so = row_major_strides(t.shape());
    const std::size_t n = t.numel();
    for (std::size_t flat = 0; flat < n; ++flat) {
        std::size_t rem = flat, io = 0;
        for (std::size_t d = 0; d < t.shape().size(); ++d) {
            const std::size_t idx = rem / so[d];
            rem %= so[d];
            io += idx * st[d];
        }
        out[io] += t[flat];
    }
    return out;
}

void add_into(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

std::size_t last_extent(const Shape& s) { return s.empty() ? 1 : s.back(); }

double stable_sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double stable_softplus(double x) {
    if (x > 0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

}  // namespace

const char* op_name(Op op) {
    for (const auto& p : kOpNames)
        if (p.op == op) return p.name;
    return "?";
}

Op op_from_name(std::string_view name) {
    for (const auto& p : kOpNames)
        if (name == p.name) return p.op;
    throw UnsupportedOp("unknown primitive tag '" + std::string(name) + "'");
}

const Node& Graph::node(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw ContractError("node id " + std::to_string(id) + " out of range");
    return nodes_[static_cast<std::size_t>(id)];
}

NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::leaf_param(std::string name, Tensor value) {
    for (const auto& n : nodes_)
        if (n.op == Op::LeafParam && n.param_name == name)
            throw ContractError("duplicate parameter leaf '" + name + "'");
    value.require_finite("leaf-param " + name);
    Node n;
    n.op = Op::LeafParam;
    n.value = std::move(value);
    n.param_name = std::move(name);
    return push(std::move(n));
}

NodeId Graph::leaf_const(Tensor value) {
    value.require_finite("leaf-const");
    Node n;
    n.op = Op::LeafConst;
    n.value = std::move(value);
    return push(std::move(n));
}

NodeId Graph::conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
    Attrs a;
    a.stride = stride;
    a.pad = pad;
    return apply(Op::Conv2d, {x, w, b}, std::move(a));
}

NodeId Graph::batchnorm_train(NodeId x, NodeId gamma, NodeId beta, double eps) {
    Attrs a;
    a.train_mode = true;
    a.eps = eps;
    return apply(Op::BatchNorm, {x, gamma, beta}, std::move(a));
}

NodeId Graph::batchnorm_eval(NodeId x, NodeId gamma, NodeId beta, NodeId run_mean, NodeId run_var,
                             double eps) {
    Attrs a;
    a.train_mode = false;
    a.eps = eps;
    return apply(Op::BatchNorm, {x, gamma, beta, run_mean, run_var}, std::move(a));
}

NodeId Graph::concat(const std::vector<NodeId>& xs, int axis) {
    Attrs a;
    a.axis = axis;
    return apply(Op::Concat, xs, std::move(a));
}

NodeId Graph::scalar_mul(NodeId x, real s) {
    Attrs a;
    a.scalar = s;
    return apply(Op::ScalarMul, {x}, std::move(a));
}

NodeId Graph::cross_entropy_logits(NodeId logits, std::vector<int> classes) {
    Attrs a;
    a.classes = std::move(classes);
    return apply(Op::CrossEntropyLogits, {logits}, std::move(a));
}

NodeId Graph::time_embedding(NodeId t, int dim, double scale) {
    Attrs a;
    a.dim = dim;
    a.time_scale = scale;
    return apply(Op::TimeEmbedding, {t}, std::move(a));
}

NodeId Graph::max_pool2d(NodeId x, int kernel, int stride) {
    Attrs a;
    a.kernel = kernel;
    a.stride = stride == 0 ? kernel : stride;
    return apply(Op::MaxPool2d, {x}, std::move(a));
}

NodeId Graph::dropout(NodeId x, double keep_prob, bool train_mode, RngStream stream) {
    Attrs a;
    a.keep_prob = keep_prob;
    a.train_mode = train_mode;
    a.stream = stream;
    return apply(Op::Dropout, {x}, std::move(a));
}

NodeId Graph::reshape(NodeId x, Shape shape) {
    Attrs a;
    a.shape = std::move(shape);
    return apply(Op::Reshape, {x}, std::move(a));
}

NodeId Graph::embed_select(NodeId table, std::vector<int> rows) {
    Attrs a;
    a.classes = std::move(rows);
    return apply(Op::EmbedSelect, {table}, std::move(a));
}

NodeId Graph::apply(Op op, const std::vector<NodeId>& inputs, Attrs attrs) {
    for (NodeId id : inputs) node(id);  // range check

    Node n;
    n.op = op;
    n.inputs = inputs;
    n.attrs = std::move(attrs);

    auto in = [&](std::size_t i) -> const Tensor& { return nodes_[inputs.at(i)].value; };
    auto arity = [&](std::size_t lo, std::size_t hi) {
        if (inputs.size() < lo || inputs.size() > hi)
            throw ContractError(std::string(op_name(op)) + ": bad input count " +
                                std::to_string(inputs.size()));
    };

    switch (op) {
        case Op::LeafParam:
        case Op::LeafConst:
            throw ContractError("leaves are created via leaf_param/leaf_const");

        case Op::Linear: {
            arity(2, 3);
            const Tensor& x = in(0);
            const Tensor& w = in(1);
            if (w.rank() != 2) throw ShapeError("linear: weight must be rank 2, got " + shape_str(w.shape()));
            const std::size_t nin = w.extent(0), nout = w.extent(1);
            const bool batched = x.rank() == 2;
            if (!batched && x.rank() != 1)
                throw ShapeError("linear: input must be rank 1 or 2, got " + shape_str(x.shape()));
            const std::size_t B = batched ? x.extent(0) : 1;
            const std::size_t xin = batched ? x.extent(1) : x.extent(0);
            if (xin != nin)
                throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " +
                                 shape_str(w.shape()));
            const real* bias = nullptr;
            if (inputs.size() == 3) {
                const Tensor& bt = in(2);
                if (bt.numel() != nout)
                    throw ShapeError("linear: bias " + shape_str(bt.shape()) + " vs weight " +
                                     shape_str(w.shape()));
                bias = bt.data();
            }
            Tensor out(batched ? Shape{B, nout} : Shape{nout});
            for (std::size_t i = 0; i < B; ++i) {
                real* orow = out.data() + i * nout;
                if (bias)
                    std::memcpy(orow, bias, nout * sizeof(real));
                else
                    std::fill(orow, orow + nout, real(0));
                const real* xrow = x.data() + i * nin;
                for (std::size_t k = 0; k < nin; ++k) {
                    const real xv = xrow[k];
                    const real* wrow = w.data() + k * nout;
                    for (std::size_t j = 0; j < nout; ++j) orow[j] += xv * wrow[j];
                }
            }
            n.value = std::move(out);
            break;
        }

        case Op::Conv2d: {
            arity(2, 3);
            const Tensor& x = in(0);
            const Tensor& w = in(1);
            if (x.rank() != 4 || w.rank() != 4)
                throw ShapeError("conv2d: input " + shape_str(x.shape()) + " and kernel " +
                                 shape_str(w.shape()) + " must be rank 4");
            const std::size_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
            const std::size_t OC = w.extent(0), KH = w.extent(2), KW = w.extent(3);
            if (w.extent(1) != C)
                throw ShapeError("conv2d: input " + shape_str(x.shape()) + " vs kernel " +
                                 shape_str(w.shape()));
            const int s = n.attrs.stride, p = n.attrs.pad;
            if (s < 1 || p < 0) throw ContractError("conv2d: stride/pad invalid");
            if (H + 2 * static_cast<std::size_t>(p) < KH || W + 2 * static_cast<std::size_t>(p) < KW)
                throw ShapeError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                                 shape_str(x.shape()));
            const std::size_t OH = (H + 2 * p - KH) / s + 1;
            const std::size_t OW = (W + 2 * p - KW) / s + 1;
            const real* bias = nullptr;
            if (inputs.size() == 3) {
                if (in(2).numel() != OC)
                    throw ShapeError("conv2d: bias " + shape_str(in(2).shape()) + " vs kernel " +
                                     shape_str(w.shape()));
                bias = in(2).data();
            }
            Tensor out(Shape{B, OC, OH, OW}, real(0));
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t oc = 0; oc < OC; ++oc) {
                    real* oplane = out.data() + ((b * OC + oc) * OH) * OW;
                    if (bias)
                        for (std::size_t i = 0; i < OH * OW; ++i) oplane[i] = bias[oc];
                    for (std::size_t ic = 0; ic < C; ++ic) {
                        const real* xplane = x.data() + ((b * C + ic) * H) * W;
                        const real* wk = w.data() + ((oc * C + ic) * KH) * KW;
                        if (s == 1 && p == 0 && KH == 3 && KW == 3) {
                            // fused 3x3 kernel: nine taps per output, contiguous rows
                            const real w00 = wk[0], w01 = wk[1], w02 = wk[2];
                            const real w10 = wk[3], w11 = wk[4], w12 = wk[5];
                            const real w20 = wk[6], w21 = wk[7], w22 = wk[8];
                            for (std::size_t oh = 0; oh < OH; ++oh) {
                                const real* r0 = xplane + oh * W;
                                const real* r1 = r0 + W;
                                const real* r2 = r1 + W;
                                real* orow = oplane + oh * OW;
                                for (std::size_t ow = 0; ow < OW; ++ow)
                                    orow[ow] += w00 * r0[ow] + w01 * r0[ow + 1] + w02 * r0[ow + 2] +
                                                w10 * r1[ow] + w11 * r1[ow + 1] + w12 * r1[ow + 2] +
                                                w20 * r2[ow] + w21 * r2[ow + 1] + w22 * r2[ow + 2];
                            }
                            continue;
                        }
                        for (std::size_t oh = 0; oh < OH; ++oh) {
                            real* orow = oplane + oh * OW;
                            for (std::size_t kh = 0; kh < KH; ++kh) {
                                const long ih = static_cast<long>(oh) * s - p + static_cast<long>(kh);
                                if (ih < 0 || ih >= static_cast<long>(H)) continue;
                                const real* xrow = xplane + ih * W;
                                const real* wrow = wk + kh * KW;
                                if (s == 1) {
                                    // stride 1: each kernel tap is an axpy over a contiguous row
                                    for (std::size_t kw = 0; kw < KW; ++kw) {
                                        const long iw0 = static_cast<long>(kw) - p;
                                        const std::size_t lo =
                                            iw0 < 0 ? static_cast<std::size_t>(-iw0) : 0;
                                        const long hi_l = static_cast<long>(W) - iw0;
                                        const std::size_t hi = std::min(
                                            OW, hi_l < 0 ? 0 : static_cast<std::size_t>(hi_l));
                                        const real wv = wrow[kw];
                                        const real* xs = xrow + iw0;
                                        for (std::size_t ow = lo; ow < hi; ++ow)
                                            orow[ow] += wv * xs[ow];
                                    }
                                } else {
                                    for (std::size_t ow = 0; ow < OW; ++ow) {
                                        real acc = 0;
                                        const long iw0 = static_cast<long>(ow) * s - p;
                                        for (std::size_t kw = 0; kw < KW; ++kw) {
                                            const long iw = iw0 + static_cast<long>(kw);
                                            if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                            acc += xrow[iw] * wrow[kw];
                                        }
                                        orow[ow] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
            n.value = std::move(out);
            break;
        }

        case Op::Relu: {
            arity(1, 1);
            Tensor out(in(0).shape());
            for (std::size_t i = 0; i < out.numel(); ++i) out[i] = in(0)[i] > 0 ? in(0)[i] : real(0);
            n.value = std::move(out);
            break;
        }

        case Op::BatchNorm: {
            arity(n.attrs.train_mode ? 3 : 5, n.attrs.train_mode ? 3 : 5);
            const Tensor& x = in(0);
            const Tensor& gamma = in(1);
            const Tensor& beta = in(2);
            if (x.rank() != 2 && x.rank() != 4)
                throw ShapeError("batchnorm: input must be rank 2 or 4, got " + shape_str(x.shape()));
            const std::size_t F = x.rank() == 2 ? x.extent(1) : x.extent(1);
            if (gamma.numel() != F || beta.numel() != F)
                throw ShapeError("batchnorm: scale/shift " + shape_str(gamma.shape()) + " vs input " +
                                 shape_str(x.shape()));
            const std::size_t B = x.extent(0);
            const std::size_t spatial = x.rank() == 4 ? x.extent(2) * x.extent(3) : 1;
            const std::size_t per_feature = B * spatial;
            // iterate features with structured loops: rank-2 input strides by F,
            // rank-4 input exposes contiguous per-(b, c) planes
            auto for_feature = [&](std::size_t f, auto&& fn) {
                if (x.rank() == 2) {
                    for (std::size_t b = 0; b < B; ++b) fn(b * F + f);
                } else {
                    for (std::size_t b = 0; b < B; ++b) {
                        const std::size_t base = (b * F + f) * spatial;
                        for (std::size_t i = 0; i < spatial; ++i) fn(base + i);
                    }
                }
            };
            Tensor mean(Shape{F}, real(0)), var(Shape{F}, real(0));
            if (n.attrs.train_mode) {
                for (std::size_t f = 0; f < F; ++f) {
                    real acc = 0;
                    for_feature(f, [&](std::size_t i) { acc += x[i]; });
                    mean[f] = acc / static_cast<real>(per_feature);
                    real vacc = 0;
                    for_feature(f, [&](std::size_t i) {
                        const real d = x[i] - mean[f];
                        vacc += d * d;
                    });
                    var[f] = vacc / static_cast<real>(per_feature);
                }
            } else {
                mean = in(3);
                var = in(4);
                if (mean.numel() != F || var.numel() != F)
                    throw ShapeError("batchnorm: running stats size mismatch for input " +
                                     shape_str(x.shape()));
            }
            Tensor inv_std(Shape{F});
            for (std::size_t f = 0; f < F; ++f)
                inv_std[f] = real(1) / std::sqrt(var[f] + static_cast<real>(n.attrs.eps));
            Tensor xhat(x.shape()), out(x.shape());
            for (std::size_t f = 0; f < F; ++f) {
                const real mu = mean[f], is = inv_std[f], ga = gamma[f], be = beta[f];
                for_feature(f, [&](std::size_t i) {
                    xhat[i] = (x[i] - mu) * is;
                    out[i] = ga * xhat[i] + be;
                });
            }
            n.aux = {xhat, inv_std, mean, var};
            n.value = std::move(out);
            break;
        }

        case Op::Softmax:
        case Op::LogSoftmax: {
            arity(1, 1);
            const Tensor& x = in(0);
            if (x.rank() == 0) throw ShapeError("softmax: scalar input");
            const std::size_t m = last_extent(x.shape());
            const std::size_t rows = x.numel() / m;
            Tensor out(x.shape());
            Tensor probs(x.shape());
            for (std::size_t r = 0; r < rows; ++r) {
                const real* xr = x.data() + r * m;
                real mx = xr[0];
                for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, xr[j]);
                real sum = 0;
                for (std::size_t j = 0; j < m; ++j) sum += std::exp(xr[j] - mx);
                const real lse = mx + std::log(sum);
                for (std::size_t j = 0; j < m; ++j) {
                    const real lp = xr[j] - lse;
                    probs[r * m + j] = std::exp(lp);
                    out[r * m + j] = op == Op::Softmax ? probs[r * m + j] : lp;
                }
            }
            if (op == Op::LogSoftmax) n.aux = {probs};
            n.value = std::move(out);
            break;
        }

        case Op::Concat: {
            if (inputs.size() < 2) throw ContractError("concat: needs at least two inputs");
            const Tensor& first = in(0);
            const std::size_t rank = first.rank();
            const int axis = n.attrs.axis;
            if (axis < 0 || static_cast<std::size_t>(axis) >= rank)
                throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                                 shape_str(first.shape()));
            Shape os = first.shape();
            for (std::size_t i = 1; i < inputs.size(); ++i) {
                const Tensor& t = in(i);
                if (t.rank() != rank)
                    throw ShapeError("concat: rank mismatch " + shape_str(first.shape()) + " vs " +
                                     shape_str(t.shape()));
                for (std::size_t d = 0; d < rank; ++d)
                    if (d != static_cast<std::size_t>(axis) && t.extent(d) != first.extent(d))
                        throw ShapeError("concat: " + shape_str(first.shape()) + " vs " +
                                         shape_str(t.shape()));
                os[axis] += t.extent(axis);
            }
            Tensor out(os);
            std::size_t outer = 1, inner = 1;
            for (std::size_t d = 0; d < static_cast<std::size_t>(axis); ++d) outer *= os[d];
            for (std::size_t d = axis + 1; d < rank; ++d) inner *= os[d];
            std::size_t offset = 0;
            for (std::size_t i = 0; i < inputs.size(); ++i) {
                const Tensor& t = in(i);
                const std::size_t ext = t.extent(axis);
                for (std::size_t o = 0; o < outer; ++o)
                    std::memcpy(out.data() + (o * os[axis] + offset) * inner,
                                t.data() + o * ext * inner, ext * inner * sizeof(real));
                offset += ext;
            }
            n.value = std::move(out);
            break;
        }

        case Op::Add: {
            arity(2, 2);
            n.value = broadcast_binary(in(0), in(1), [](real a, real b) { return a + b; });
            break;
        }

        case Op::Mul: {
            arity(2, 2);
            n.value = broadcast_binary(in(0), in(1), [](real a, real b) { return a * b; });
            break;
        }

        case Op::ScalarMul: {
            arity(1, 1);
            Tensor out(in(0).shape());
            const real s = static_cast<real>(n.attrs.scalar);
            for (std::size_t i = 0; i < out.numel(); ++i) out[i] = in(0)[i] * s;
            n.value = std::move(out);
            break;
        }

        case Op::SumReduce:
        case Op::MeanReduce: {
            arity(1, 1);
            real acc = 0;
            for (std::size_t i = 0; i < in(0).numel(); ++i) acc += in(0)[i];
            if (op == Op::MeanReduce) acc /= static_cast<real>(in(0).numel());
            n.value = Tensor::scalar(acc);
            break;
        }

        case Op::SquaredL2: {
            arity(1, 1);
            const Tensor& x = in(0);
            const std::size_t m = last_extent(x.shape());
            const std::size_t rows = x.numel() / m;
            Shape os(x.shape());
            if (!os.empty()) os.pop_back();
            Tensor out(os, real(0));
            for (std::size_t r = 0; r < rows; ++r) {
                real acc = 0;
                for (std::size_t j = 0; j < m; ++j) {
                    const real v = x[r * m + j];
                    acc += v * v;
                }
                out[r] = acc;
            }
            n.value = std::move(out);
            break;
        }

        case Op::CrossEntropyLogits: {
            arity(1, 1);
            const Tensor& x = in(0);
            if (x.rank() != 1 && x.rank() != 2)
                throw ShapeError("cross-entropy: logits must be rank 1 or 2, got " + shape_str(x.shape()));
            const std::size_t m = last_extent(x.shape());
            const std::size_t B = x.numel() / m;
            const auto& ys = n.attrs.classes;
            if (ys.size() != B)
                throw ContractError("cross-entropy: " + std::to_string(ys.size()) + " targets for batch " +
                                    std::to_string(B));
            Tensor probs(Shape{B, m});
            real loss = 0;
            for (std::size_t r = 0; r < B; ++r) {
                const int y = ys[r];
                if (y < 0 || static_cast<std::size_t>(y) >= m)
                    throw RangeError("cross-entropy: class " + std::to_string(y) + " out of range [0," +
                                     std::to_string(m) + ")");
                const real* xr = x.data() + r * m;
                real mx = xr[0];
                for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, xr[j]);
                real sum = 0;
                for (std::size_t j = 0; j < m; ++j) sum += std::exp(xr[j] - mx);
                const real lse = mx + std::log(sum);
                for (std::size_t j = 0; j < m; ++j) probs[r * m + j] = std::exp(xr[j] - lse);
                loss -= xr[y] - lse;
            }
            n.aux = {probs};
            n.value = Tensor::scalar(loss / static_cast<real>(B));
            break;
        }

        case Op::TimeEmbedding: {
            arity(1, 1);
            const Tensor& t = in(0);
            const int dim = n.attrs.dim;
            if (dim < 2 || dim % 2 != 0)
                throw ContractError("time-embedding: dim must be even and >= 2");
            const std::size_t B = t.numel();
            const std::size_t half = static_cast<std::size_t>(dim) / 2;
            const bool scalar_in = t.rank() == 0;
            Tensor out(scalar_in ? Shape{static_cast<std::size_t>(dim)}
                                 : Shape{B, static_cast<std::size_t>(dim)});
            for (std::size_t b = 0; b < B; ++b) {
                const double tv = n.attrs.time_scale * static_cast<double>(t[b]);
                for (std::size_t i = 0; i < half; ++i) {
                    const double w = std::exp(-kLogMaxFreq * static_cast<double>(i) / static_cast<double>(half));
                    out[b * dim + 2 * i] = static_cast<real>(std::sin(tv * w));
                    out[b * dim + 2 * i + 1] = static_cast<real>(std::cos(tv * w));
                }
            }
            n.value = std::move(out);
            break;
        }

        case Op::MaxPool2d: {
            arity(1, 1);
            const Tensor& x = in(0);
            if (x.rank() != 4) throw ShapeError("max-pool2d: input must be rank 4, got " + shape_str(x.shape()));
            const int k = n.attrs.kernel, s = n.attrs.stride;
            if (k < 1 || s < 1) throw ContractError("max-pool2d: bad kernel/stride");
            const std::size_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
            if (H < static_cast<std::size_t>(k) || W < static_cast<std::size_t>(k))
                throw ShapeError("max-pool2d: window exceeds input " + shape_str(x.shape()));
            const std::size_t OH = (H - k) / s + 1, OW = (W - k) / s + 1;
            Tensor out(Shape{B, C, OH, OW});
            Tensor arg(Shape{B, C, OH, OW});
            for (std::size_t bc = 0; bc < B * C; ++bc) {
                const real* plane = x.data() + bc * H * W;
                for (std::size_t oh = 0; oh < OH; ++oh)
                    for (std::size_t ow = 0; ow < OW; ++ow) {
                        std::size_t best = (oh * s) * W + ow * s;
                        real bv = plane[best];
                        for (int kh = 0; kh < k; ++kh)
                            for (int kw = 0; kw < k; ++kw) {
                                const std::size_t idx = (oh * s + kh) * W + ow * s + kw;
                                if (plane[idx] > bv) {
                                    bv = plane[idx];
                                    best = idx;
                                }
                            }
                        out[bc * OH * OW + oh * OW + ow] = bv;
                        arg[bc * OH * OW + oh * OW + ow] = static_cast<real>(best);
                    }
            }
            n.aux = {arg};
            n.value = std::move(out);
            break;
        }

        case Op::Dropout: {
            arity(1, 1);
            const double keep = n.attrs.keep_prob;
            if (!(keep > 0.0 && keep <= 1.0)) throw ConfigError("dropout: keep prob must be in (0,1]");
            const Tensor& x = in(0);
            if (!n.attrs.train_mode) {
                n.value = x;
                break;
            }
            RngStream stream = n.attrs.stream;
            Tensor mask(x.shape());
            Tensor out(x.shape());
            for (std::size_t i = 0; i < x.numel(); ++i) {
                mask[i] = stream.uniform() < keep ? static_cast<real>(1.0 / keep) : real(0);
                out[i] = x[i] * mask[i];
            }
            n.aux = {std::move(mask)};
            n.value = std::move(out);
            break;
        }

        case Op::Reshape: {
            arity(1, 1);
            if (shape_numel(n.attrs.shape) != in(0).numel())
                throw ShapeError("reshape: " + shape_str(in(0).shape()) + " to " + shape_str(n.attrs.shape));
            n.value = Tensor(n.attrs.shape, in(0).vec());
            break;
        }

        case Op::EmbedSelect: {
            arity(1, 1);
            const Tensor& w = in(0);
            if (w.rank() != 2) throw ShapeError("embed-select: table must be rank 2, got " + shape_str(w.shape()));
            const std::size_t m = w.extent(0), d = w.extent(1);
            const auto& rows = n.attrs.classes;
            if (rows.empty()) throw ContractError("embed-select: empty row list");
            Tensor out(Shape{rows.size(), d});
            for (std::size_t b = 0; b < rows.size(); ++b) {
                const int r = rows[b];
                if (r < 0 || static_cast<std::size_t>(r) >= m)
                    throw RangeError("embed-select: row " + std::to_string(r) + " out of range [0," +
                                     std::to_string(m) + ")");
                std::memcpy(out.data() + b * d, w.data() + static_cast<std::size_t>(r) * d,
                            d * sizeof(real));
            }
            n.value = std::move(out);
            break;
        }

        case Op::PairwiseSqDist: {
            arity(2, 2);
            const Tensor& z = in(0);
            const Tensor& w = in(1);
            if (z.rank() != 2 || w.rank() != 2 || z.extent(1) != w.extent(1))
                throw ShapeError("pairwise-sqdist: " + shape_str(z.shape()) + " vs " + shape_str(w.shape()));
            const std::size_t B = z.extent(0), m = w.extent(0), d = z.extent(1);
            Tensor out(Shape{B, m});
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t j = 0; j < m; ++j) {
                    real acc = 0;
                    const real* zr = z.data() + b * d;
                    const real* wr = w.data() + j * d;
                    for (std::size_t k = 0; k < d; ++k) {
                        const real diff = zr[k] - wr[k];
                        acc += diff * diff;
                    }
                    out[b * m + j] = acc;
                }
            n.value = std::move(out);
            break;
        }

        case Op::Exp:
        case Op::Log:
        case Op::Sqrt:
        case Op::Sigmoid:
        case Op::Softplus:
        case Op::Reciprocal:
        case Op::Tanh: {
            arity(1, 1);
            Tensor out(in(0).shape());
            for (std::size_t i = 0; i < out.numel(); ++i) {
                const double v = static_cast<double>(in(0)[i]);
                double r = 0;
                switch (op) {
                    case Op::Exp: r = std::exp(v); break;
                    case Op::Log: r = std::log(v); break;
                    case Op::Sqrt: r = std::sqrt(v); break;
                    case Op::Sigmoid: r = stable_sigmoid(v); break;
                    case Op::Softplus: r = stable_softplus(v); break;
                    case Op::Reciprocal: r = 1.0 / v; break;
                    case Op::Tanh: r = std::tanh(v); break;
                    default: break;
                }
                out[i] = static_cast<real>(r);
            }
            n.value = std::move(out);
            break;
        }

        default:
            throw UnsupportedOp("unknown primitive tag");
    }

    n.value.require_finite(op_name(op));
    return push(std::move(n));
}

GradMap Graph::backward(NodeId loss) const {
    const Node& ln = node(loss);
    if (ln.value.numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(ln.value.shape()));

    // adjoints are only propagated where a parameter leaf is reachable
    std::vector<char> needs(nodes_.size(), 0);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].op == Op::LeafParam) {
            needs[i] = 1;
            continue;
        }
        for (NodeId in_id : nodes_[i].inputs)
            if (needs[in_id]) {
                needs[i] = 1;
                break;
            }
    }

    std::vector<Tensor> adj(nodes_.size());
    std::vector<char> has(nodes_.size(), 0);
    if (needs[loss]) {
        adj[loss] = Tensor(ln.value.shape(), real(1));
        has[loss] = 1;
    }

    auto accum = [&](NodeId id, const Tensor& g) {
        if (!needs[id]) return;
        if (!has[id]) {
            adj[id] = g;
            has[id] = 1;
        } else {
            add_into(adj[id], g);
        }
    };

    for (NodeId id = loss; id >= 0; --id) {
        if (!has[id]) continue;
        const Node& n = nodes_[id];
        const Tensor& g = adj[id];
        auto in = [&](std::size_t i) -> const Tensor& { return nodes_[n.inputs[i]].value; };

        switch (n.op) {
            case Op::LeafParam:
            case Op::LeafConst:
                break;

            case Op::Linear: {
                const Tensor& x = in(0);
                const Tensor& w = in(1);
                const std::size_t nin = w.extent(0), nout = w.extent(1);
                const bool batched = x.rank() == 2;
                const std::size_t B = batched ? x.extent(0) : 1;
                const bool want_dx = needs[n.inputs[0]];
                const bool want_dw = needs[n.inputs[1]];
                Tensor dx(want_dx ? x.shape() : Shape{1}, real(0));
                Tensor dw(want_dw ? w.shape() : Shape{1}, real(0));
                for (std::size_t i = 0; i < B; ++i) {
                    const real* grow = g.data() + i * nout;
                    const real* xrow = x.data() + i * nin;
                    real* dxrow = want_dx ? dx.data() + i * nin : nullptr;
                    for (std::size_t k = 0; k < nin; ++k) {
                        const real* wrow = w.data() + k * nout;
                        const real xv = xrow[k];
                        if (want_dw) {
                            real* dwrow = dw.data() + k * nout;
                            if (want_dx) {
                                real acc = 0;
                                for (std::size_t j = 0; j < nout; ++j) {
                                    acc += grow[j] * wrow[j];
                                    dwrow[j] += xv * grow[j];
                                }
                                dxrow[k] += acc;
                            } else {
                                for (std::size_t j = 0; j < nout; ++j) dwrow[j] += xv * grow[j];
                            }
                        } else if (want_dx) {
                            real acc = 0;
                            for (std::size_t j = 0; j < nout; ++j) acc += grow[j] * wrow[j];
                            dxrow[k] += acc;
                        }
                    }
                }
                if (want_dx) accum(n.inputs[0], dx);
                if (want_dw) accum(n.inputs[1], dw);
                if (n.inputs.size() == 3) {
                    Tensor db(in(2).shape(), real(0));
                    for (std::size_t i = 0; i < B; ++i)
                        for (std::size_t j = 0; j < nout; ++j) db[j] += g[i * nout + j];
                    accum(n.inputs[2], db);
                }
                break;
            }

            case Op::Conv2d: {
                const Tensor& x = in(0);
                const Tensor& w = in(1);
                const std::size_t B = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
                const std::size_t OC = w.extent(0), KH = w.extent(2), KW = w.extent(3);
                const std::size_t OH = n.value.extent(2), OW = n.value.extent(3);
                const int s = n.attrs.stride, p = n.attrs.pad;
                const bool want_dx = needs[n.inputs[0]];
                Tensor dx(want_dx ? x.shape() : Shape{1}, real(0));
                Tensor dw(w.shape(), real(0));
                // zero-padded adjoint plane (built per (b, oc)) for the fused dx path
                const std::size_t PW = OW + 4;
                std::vector<real> gpad;
                const bool fused = s == 1 && p == 0 && KH == 3 && KW == 3 && want_dx;
                if (fused) gpad.assign((OH + 4) * PW, real(0));
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t oc = 0; oc < OC; ++oc) {
                        const real* gplane = g.data() + ((b * OC + oc) * OH) * OW;
                        if (fused)
                            for (std::size_t oh = 0; oh < OH; ++oh)
                                std::memcpy(gpad.data() + (oh + 2) * PW + 2, gplane + oh * OW,
                                            OW * sizeof(real));
                        for (std::size_t ic = 0; ic < C; ++ic) {
                            const real* xplane = x.data() + ((b * C + ic) * H) * W;
                            real* dxplane = want_dx ? dx.data() + ((b * C + ic) * H) * W : nullptr;
                            const real* wk = w.data() + ((oc * C + ic) * KH) * KW;
                            real* dwk = dw.data() + ((oc * C + ic) * KH) * KW;
                            if (s == 1 && p == 0 && KH == 3 && KW == 3 && !want_dx) {
                                // dw only: nine dot products against the output adjoint
                                real a00 = 0, a01 = 0, a02 = 0, a10 = 0, a11 = 0, a12 = 0, a20 = 0,
                                     a21 = 0, a22 = 0;
                                for (std::size_t oh = 0; oh < OH; ++oh) {
                                    const real* grow = gplane + oh * OW;
                                    const real* r0 = xplane + oh * W;
                                    const real* r1 = r0 + W;
                                    const real* r2 = r1 + W;
                                    for (std::size_t ow = 0; ow < OW; ++ow) {
                                        const real gv = grow[ow];
                                        a00 += gv * r0[ow];
                                        a01 += gv * r0[ow + 1];
                                        a02 += gv * r0[ow + 2];
                                        a10 += gv * r1[ow];
                                        a11 += gv * r1[ow + 1];
                                        a12 += gv * r1[ow + 2];
                                        a20 += gv * r2[ow];
                                        a21 += gv * r2[ow + 1];
                                        a22 += gv * r2[ow + 2];
                                    }
                                }
                                dwk[0] += a00;
                                dwk[1] += a01;
                                dwk[2] += a02;
                                dwk[3] += a10;
                                dwk[4] += a11;
                                dwk[5] += a12;
                                dwk[6] += a20;
                                dwk[7] += a21;
                                dwk[8] += a22;
                                continue;
                            }
                            if (s == 1 && p == 0 && KH == 3 && KW == 3) {
                                real a00 = 0, a01 = 0, a02 = 0, a10 = 0, a11 = 0, a12 = 0, a20 = 0,
                                     a21 = 0, a22 = 0;
                                for (std::size_t oh = 0; oh < OH; ++oh) {
                                    const real* grow = gplane + oh * OW;
                                    const real* r0 = xplane + oh * W;
                                    const real* r1 = r0 + W;
                                    const real* r2 = r1 + W;
                                    for (std::size_t ow = 0; ow < OW; ++ow) {
                                        const real gv = grow[ow];
                                        a00 += gv * r0[ow];
                                        a01 += gv * r0[ow + 1];
                                        a02 += gv * r0[ow + 2];
                                        a10 += gv * r1[ow];
                                        a11 += gv * r1[ow + 1];
                                        a12 += gv * r1[ow + 2];
                                        a20 += gv * r2[ow];
                                        a21 += gv * r2[ow + 1];
                                        a22 += gv * r2[ow + 2];
                                    }
                                }
                                dwk[0] += a00;
                                dwk[1] += a01;
                                dwk[2] += a02;
                                dwk[3] += a10;
                                dwk[4] += a11;
                                dwk[5] += a12;
                                dwk[6] += a20;
                                dwk[7] += a21;
                                dwk[8] += a22;
                                // dx: full correlation of the padded adjoint with the
                                // flipped kernel, written as contiguous rows
                                const real f00 = wk[8], f01 = wk[7], f02 = wk[6];
                                const real f10 = wk[5], f11 = wk[4], f12 = wk[3];
                                const real f20 = wk[2], f21 = wk[1], f22 = wk[0];
                                for (std::size_t ih = 0; ih < H; ++ih) {
                                    const real* p0 = gpad.data() + ih * PW;
                                    const real* p1 = p0 + PW;
                                    const real* p2 = p1 + PW;
                                    real* drow = dxplane + ih * W;
                                    for (std::size_t iw = 0; iw < W; ++iw)
                                        drow[iw] += f00 * p0[iw] + f01 * p0[iw + 1] + f02 * p0[iw + 2] +
                                                    f10 * p1[iw] + f11 * p1[iw + 1] + f12 * p1[iw + 2] +
                                                    f20 * p2[iw] + f21 * p2[iw + 1] + f22 * p2[iw + 2];
                                }
                                continue;
                            }
                            for (std::size_t oh = 0; oh < OH; ++oh) {
                                const real* grow = gplane + oh * OW;
                                for (std::size_t kh = 0; kh < KH; ++kh) {
                                    const long ih = static_cast<long>(oh) * s - p + static_cast<long>(kh);
                                    if (ih < 0 || ih >= static_cast<long>(H)) continue;
                                    const real* xrow = xplane + ih * W;
                                    real* dxrow = want_dx ? dxplane + ih * W : nullptr;
                                    const real* wrow = wk + kh * KW;
                                    real* dwrow = dwk + kh * KW;
                                    if (s == 1) {
                                        for (std::size_t kw = 0; kw < KW; ++kw) {
                                            const long iw0 = static_cast<long>(kw) - p;
                                            const std::size_t lo =
                                                iw0 < 0 ? static_cast<std::size_t>(-iw0) : 0;
                                            const long hi_l = static_cast<long>(W) - iw0;
                                            const std::size_t hi = std::min(
                                                OW, hi_l < 0 ? 0 : static_cast<std::size_t>(hi_l));
                                            const real wv = wrow[kw];
                                            const real* xs = xrow + iw0;
                                            real wacc = 0;
                                            if (want_dx) {
                                                real* dxs = dxrow + iw0;
                                                for (std::size_t ow = lo; ow < hi; ++ow) {
                                                    wacc += grow[ow] * xs[ow];
                                                    dxs[ow] += grow[ow] * wv;
                                                }
                                            } else {
                                                for (std::size_t ow = lo; ow < hi; ++ow)
                                                    wacc += grow[ow] * xs[ow];
                                            }
                                            dwrow[kw] += wacc;
                                        }
                                    } else {
                                        for (std::size_t ow = 0; ow < OW; ++ow) {
                                            const real gv = grow[ow];
                                            if (gv == real(0)) continue;
                                            const long iw0 = static_cast<long>(ow) * s - p;
                                            for (std::size_t kw = 0; kw < KW; ++kw) {
                                                const long iw = iw0 + static_cast<long>(kw);
                                                if (iw < 0 || iw >= static_cast<long>(W)) continue;
                                                dwrow[kw] += gv * xrow[iw];
                                                if (want_dx) dxrow[iw] += gv * wrow[kw];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                if (want_dx) accum(n.inputs[0], dx);
                accum(n.inputs[1], dw);
                if (n.inputs.size() == 3) {
                    Tensor db(in(2).shape(), real(0));
                    for (std::size_t b = 0; b < B; ++b)
                        for (std::size_t oc = 0; oc < OC; ++oc) {
                            const real* gplane = g.data() + ((b * OC + oc) * OH) * OW;
                            real acc = 0;
                            for (std::size_t i = 0; i < OH * OW; ++i) acc += gplane[i];
                            db[oc] += acc;
                        }
                    accum(n.inputs[2], db);
                }
                break;
            }

            case Op::Relu: {
                Tensor dx(in(0).shape());
                for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = in(0)[i] > 0 ? g[i] : real(0);
                accum(n.inputs[0], dx);
                break;
            }

            case Op::BatchNorm: {
                const Tensor& x = in(0);
                const Tensor& gamma = in(1);
                const Tensor& xhat = n.aux[0];
                const Tensor& inv_std = n.aux[1];
                const std::size_t F = gamma.numel();
                const std::size_t B = x.extent(0);
                const std::size_t spatial = x.rank() == 4 ? x.extent(2) * x.extent(3) : 1;
                const std::size_t per_feature = B * spatial;
                auto for_feature = [&](std::size_t f, auto&& fn) {
                    if (x.rank() == 2) {
                        for (std::size_t b = 0; b < B; ++b) fn(b * F + f);
                    } else {
                        for (std::size_t b = 0; b < B; ++b) {
                            const std::size_t base = (b * F + f) * spatial;
                            for (std::size_t i = 0; i < spatial; ++i) fn(base + i);
                        }
                    }
                };
                Tensor dgamma(gamma.shape(), real(0)), dbeta(gamma.shape(), real(0));
                Tensor dx(x.shape());
                if (n.attrs.train_mode) {
                    const real invN = real(1) / static_cast<real>(per_feature);
                    for (std::size_t f = 0; f < F; ++f) {
                        real gsum = 0, gxsum = 0;
                        for_feature(f, [&](std::size_t i) {
                            gsum += g[i];
                            gxsum += g[i] * xhat[i];
                        });
                        dgamma[f] = gxsum;
                        dbeta[f] = gsum;
                        const real ga_is = gamma[f] * inv_std[f];
                        const real gmean = gsum * invN, gxmean = gxsum * invN;
                        for_feature(f, [&](std::size_t i) {
                            dx[i] = ga_is * (g[i] - gmean - xhat[i] * gxmean);
                        });
                    }
                    accum(n.inputs[0], dx);
                } else {
                    const Tensor& rv = in(4);
                    Tensor dmean(Shape{F}, real(0)), dvar(Shape{F}, real(0));
                    for (std::size_t f = 0; f < F; ++f) {
                        const real ga_is = gamma[f] * inv_std[f];
                        real gsum = 0, gxsum = 0;
                        for_feature(f, [&](std::size_t i) {
                            gsum += g[i];
                            gxsum += g[i] * xhat[i];
                            dx[i] = g[i] * ga_is;
                        });
                        dgamma[f] = gxsum;
                        dbeta[f] = gsum;
                        dmean[f] = -gsum * ga_is;
                        dvar[f] = -gxsum * gamma[f] * inv_std[f] * real(0.5) /
                                  (rv[f] + static_cast<real>(n.attrs.eps));
                    }
                    accum(n.inputs[0], dx);
                    accum(n.inputs[3], dmean);
                    accum(n.inputs[4], dvar);
                }
                accum(n.inputs[1], dgamma);
                accum(n.inputs[2], dbeta);
                break;
            }

            case Op::Softmax: {
                const Tensor& y = n.value;
                const std::size_t m = last_extent(y.shape());
                const std::size_t rows = y.numel() / m;
                Tensor dx(y.shape());
                for (std::size_t r = 0; r < rows; ++r) {
                    real dotv = 0;
                    for (std::size_t j = 0; j < m; ++j) dotv += g[r * m + j] * y[r * m + j];
                    for (std::size_t j = 0; j < m; ++j)
                        dx[r * m + j] = y[r * m + j] * (g[r * m + j] - dotv);
                }
                accum(n.inputs[0], dx);
                break;
            }

            case Op::LogSoftmax: {
                const Tensor& p = n.aux[0];
                const std::size_t m = last_extent(p.shape());
                const std::size_t rows = p.numel() / m;
                Tensor dx(p.shape());
                for (std::size_t r = 0; r < rows; ++r) {
                    real gsum = 0;
                    for (std::size_t j = 0; j < m; ++j) gsum += g[r * m + j];
                    for (std::size_t j = 0; j < m; ++j)
                        dx[r * m + j] = g[r * m + j] - p[r * m + j] * gsum;
                }
                accum(n.inputs[0], dx);
                break;
            }

            case Op::Concat: {
                const int axis = n.attrs.axis;
                const Shape& os = n.value.shape();
                std::size_t outer = 1, inner = 1;
                for (std::size_t d = 0; d < static_cast<std::size_t>(axis); ++d) outer *= os[d];
                for (std::size_t d = axis + 1; d < os.size(); ++d) inner *= os[d];
                std::size_t offset = 0;
                for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                    const Tensor& t = in(i);
                    const std::size_t ext = t.extent(axis);
                    Tensor dt(t.shape());
                    for (std::size_t o = 0; o < outer; ++o)
                        std::memcpy(dt.data() + o * ext * inner,
                                    g.data() + (o * os[axis] + offset) * inner,
                                    ext * inner * sizeof(real));
                    accum(n.inputs[i], dt);
                    offset += ext;
                }
                break;
            }

            case Op::Add: {
                accum(n.inputs[0], reduce_to_shape(g, in(0).shape()));
                accum(n.inputs[1], reduce_to_shape(g, in(1).shape()));
                break;
            }

            case Op::Mul: {
                Tensor ga = broadcast_binary(g, in(1), [](real a, real b) { return a * b; });
                Tensor gb = broadcast_binary(g, in(0), [](real a, real b) { return a * b; });
                accum(n.inputs[0], reduce_to_shape(ga, in(0).shape()));
                accum(n.inputs[1], reduce_to_shape(gb, in(1).shape()));
                break;
            }

            case Op::ScalarMul: {
                Tensor dx(in(0).shape());
                const real s = static_cast<real>(n.attrs.scalar);
                for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = g[i] * s;
                accum(n.inputs[0], dx);
                break;
            }

            case Op::SumReduce:
            case Op::MeanReduce: {
                const real gv = n.op == Op::SumReduce
                                    ? g[0]
                                    : g[0] / static_cast<real>(in(0).numel());
                accum(n.inputs[0], Tensor(in(0).shape(), gv));
                break;
            }

            case Op::SquaredL2: {
                const Tensor& x = in(0);
                const std::size_t m = last_extent(x.shape());
                const std::size_t rows = x.numel() / m;
                Tensor dx(x.shape());
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < m; ++j) dx[r * m + j] = real(2) * x[r * m + j] * g[r];
                accum(n.inputs[0], dx);
                break;
            }

            case Op::CrossEntropyLogits: {
                const Tensor& p = n.aux[0];
                const std::size_t B = p.extent(0), m = p.extent(1);
                const real scale = g[0] / static_cast<real>(B);
                Tensor dx(in(0).shape());
                for (std::size_t r = 0; r < B; ++r)
                    for (std::size_t j = 0; j < m; ++j) {
                        const real onehot = static_cast<std::size_t>(n.attrs.classes[r]) == j ? 1 : 0;
                        dx[r * m + j] = (p[r * m + j] - onehot) * scale;
                    }
                accum(n.inputs[0], dx);
                break;
            }

            case Op::TimeEmbedding: {
                const Tensor& t = in(0);
                const int dim = n.attrs.dim;
                const std::size_t half = static_cast<std::size_t>(dim) / 2;
                Tensor dt(t.shape(), real(0));
                for (std::size_t b = 0; b < t.numel(); ++b) {
                    const double tv = n.attrs.time_scale * static_cast<double>(t[b]);
                    double acc = 0;
                    for (std::size_t i = 0; i < half; ++i) {
                        const double w =
                            std::exp(-kLogMaxFreq * static_cast<double>(i) / static_cast<double>(half));
                        acc += n.attrs.time_scale * w *
                               (static_cast<double>(g[b * dim + 2 * i]) * std::cos(tv * w) -
                                static_cast<double>(g[b * dim + 2 * i + 1]) * std::sin(tv * w));
                    }
                    dt[b] = static_cast<real>(acc);
                }
                accum(n.inputs[0], dt);
                break;
            }

            case Op::MaxPool2d: {
                const Tensor& x = in(0);
                const Tensor& arg = n.aux[0];
                const std::size_t H = x.extent(2), W = x.extent(3);
                const std::size_t planes = x.extent(0) * x.extent(1);
                const std::size_t on = n.value.numel() / planes;
                Tensor dx(x.shape(), real(0));
                for (std::size_t bc = 0; bc < planes; ++bc)
                    for (std::size_t i = 0; i < on; ++i)
                        dx[bc * H * W + static_cast<std::size_t>(arg[bc * on + i])] += g[bc * on + i];
                accum(n.inputs[0], dx);
                break;
            }

            case Op::Dropout: {
                if (!n.attrs.train_mode) {
                    accum(n.inputs[0], g);
                } else {
                    const Tensor& mask = n.aux[0];
                    Tensor dx(in(0).shape());
                    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = g[i] * mask[i];
                    accum(n.inputs[0], dx);
                }
                break;
            }

            case Op::Reshape: {
                accum(n.inputs[0], Tensor(in(0).shape(), g.vec()));
                break;
            }

            case Op::EmbedSelect: {
                const Tensor& w = in(0);
                const std::size_t d = w.extent(1);
                Tensor dw(w.shape(), real(0));
                for (std::size_t b = 0; b < n.attrs.classes.size(); ++b) {
                    const std::size_t r = static_cast<std::size_t>(n.attrs.classes[b]);
                    for (std::size_t k = 0; k < d; ++k) dw[r * d + k] += g[b * d + k];
                }
                accum(n.inputs[0], dw);
                break;
            }

            case Op::PairwiseSqDist: {
                const Tensor& z = in(0);
                const Tensor& w = in(1);
                const std::size_t B = z.extent(0), m = w.extent(0), d = z.extent(1);
                Tensor dz(z.shape(), real(0)), dw(w.shape(), real(0));
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t j = 0; j < m; ++j) {
                        const real gv = real(2) * g[b * m + j];
                        if (gv == real(0)) continue;
                        for (std::size_t k = 0; k < d; ++k) {
                            const real diff = z[b * d + k] - w[j * d + k];
                            dz[b * d + k] += gv * diff;
                            dw[j * d + k] -= gv * diff;
                        }
                    }
                accum(n.inputs[0], dz);
                accum(n.inputs[1], dw);
                break;
            }

            case Op::Exp:
            case Op::Log:
            case Op::Sqrt:
            case Op::Sigmoid:
            case Op::Softplus:
            case Op::Reciprocal:
            case Op::Tanh: {
                const Tensor& x = in(0);
                const Tensor& y = n.value;
                Tensor dx(x.shape());
                for (std::size_t i = 0; i < dx.numel(); ++i) {
                    double dydx = 0;
                    const double xv = static_cast<double>(x[i]);
                    const double yv = static_cast<double>(y[i]);
                    switch (n.op) {
                        case Op::Exp: dydx = yv; break;
                        case Op::Log: dydx = 1.0 / xv; break;
                        case Op::Sqrt: dydx = 0.5 / yv; break;
                        case Op::Sigmoid: dydx = yv * (1.0 - yv); break;
                        case Op::Softplus: dydx = stable_sigmoid(xv); break;
                        case Op::Reciprocal: dydx = -yv * yv; break;
                        case Op::Tanh: dydx = 1.0 - yv * yv; break;
                        default: break;
                    }
                    dx[i] = static_cast<real>(static_cast<double>(g[i]) * dydx);
                }
                accum(n.inputs[0], dx);
                break;
            }
        }
    }

    GradMap grads;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].op != Op::LeafParam) continue;
        // every parameter leaf gets a gradient; zero when the loss does not reach it
        grads[nodes_[i].param_name] =
            has[i] ? std::move(adj[i]) : Tensor(nodes_[i].value.shape(), real(0));
    }
    return grads;
}

}  // namespace noprop
