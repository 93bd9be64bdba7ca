#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "noprop/rng.hpp"
#include "noprop/tensor.hpp"

namespace noprop {

using NodeId = std::int32_t;

enum class Op : std::uint8_t {
    LeafParam,
    LeafConst,
    Linear,
    Conv2d,
    Relu,
    BatchNorm,
    Softmax,
    LogSoftmax,
    Concat,
    Add,
    ScalarMul,
    Mul,
    SumReduce,
    MeanReduce,
    SquaredL2,
    CrossEntropyLogits,
    TimeEmbedding,
    MaxPool2d,
    Dropout,
    Reshape,
    EmbedSelect,
    PairwiseSqDist,
    Exp,
    Log,
    Sqrt,
    Sigmoid,
    Softplus,
    Reciprocal,
    Tanh,
};

const char* op_name(Op op);
Op op_from_name(std::string_view name);  // throws UnsupportedOp

struct Attrs {
    int stride = 1;
    int pad = 0;
    int kernel = 0;        // max-pool window
    int axis = -1;         // concat
    int dim = 0;           // time embedding width
    double scalar = 1.0;   // scalar-mul factor
    double keep_prob = 1.0;
    double eps = 1e-8;     // batchnorm
    double time_scale = 1000.0;
    bool train_mode = false;
    std::vector<int> classes;  // cross-entropy targets / embed-select rows
    RngStream stream;          // dropout mask source
    Shape shape;               // reshape target
};

struct Node {
    Op op = Op::LeafConst;
    std::vector<NodeId> inputs;
    Tensor value;
    Attrs attrs;
    std::string param_name;   // LeafParam only
    std::vector<Tensor> aux;  // saved intermediates for backward
};

using GradMap = std::map<std::string, Tensor>;

// Append-only record of primitive ops applied within one update. Forward
// values are computed eagerly at apply time; backward() replays the tape in
// reverse to produce exact gradients for every parameter leaf.
class Graph {
  public:
    NodeId leaf_param(std::string name, Tensor value);
    NodeId leaf_const(Tensor value);
    NodeId leaf_scalar(real v) { return leaf_const(Tensor::scalar(v)); }

    NodeId apply(Op op, const std::vector<NodeId>& inputs, Attrs attrs = {});

    // Convenience builders.
    NodeId linear(NodeId x, NodeId w) { return apply(Op::Linear, {x, w}); }
    NodeId linear(NodeId x, NodeId w, NodeId b) { return apply(Op::Linear, {x, w, b}); }
    NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride = 1, int pad = 0);
    NodeId relu(NodeId x) { return apply(Op::Relu, {x}); }
    NodeId batchnorm_train(NodeId x, NodeId gamma, NodeId beta, double eps = 1e-8);
    NodeId batchnorm_eval(NodeId x, NodeId gamma, NodeId beta, NodeId run_mean, NodeId run_var,
                          double eps = 1e-8);
    NodeId softmax(NodeId x) { return apply(Op::Softmax, {x}); }
    NodeId log_softmax(NodeId x) { return apply(Op::LogSoftmax, {x}); }
    NodeId concat(const std::vector<NodeId>& xs, int axis);
    NodeId add(NodeId a, NodeId b) { return apply(Op::Add, {a, b}); }
    NodeId sub(NodeId a, NodeId b) { return add(a, scalar_mul(b, real(-1))); }
    NodeId scalar_mul(NodeId x, real s);
    NodeId mul(NodeId a, NodeId b) { return apply(Op::Mul, {a, b}); }
    NodeId div(NodeId a, NodeId b) { return mul(a, apply(Op::Reciprocal, {b})); }
    NodeId sum_reduce(NodeId x) { return apply(Op::SumReduce, {x}); }
    NodeId mean_reduce(NodeId x) { return apply(Op::MeanReduce, {x}); }
    NodeId squared_l2(NodeId x) { return apply(Op::SquaredL2, {x}); }
    NodeId cross_entropy_logits(NodeId logits, std::vector<int> classes);
    NodeId time_embedding(NodeId t, int dim, double scale = 1000.0);
    NodeId max_pool2d(NodeId x, int kernel, int stride = 0);
    NodeId dropout(NodeId x, double keep_prob, bool train_mode, RngStream stream);
    NodeId reshape(NodeId x, Shape shape);
    NodeId embed_select(NodeId table, std::vector<int> rows);
    NodeId pairwise_sqdist(NodeId z, NodeId w) { return apply(Op::PairwiseSqDist, {z, w}); }
    NodeId exp(NodeId x) { return apply(Op::Exp, {x}); }
    NodeId log(NodeId x) { return apply(Op::Log, {x}); }
    NodeId sqrt(NodeId x) { return apply(Op::Sqrt, {x}); }
    NodeId sigmoid(NodeId x) { return apply(Op::Sigmoid, {x}); }
    NodeId softplus(NodeId x) { return apply(Op::Softplus, {x}); }
    NodeId reciprocal(NodeId x) { return apply(Op::Reciprocal, {x}); }
    NodeId tanh(NodeId x) { return apply(Op::Tanh, {x}); }

    const Tensor& value(NodeId id) const { return node(id).value; }
    const Node& node(NodeId id) const;
    std::size_t num_nodes() const { return nodes_.size(); }

    // Reverse-mode gradients of a scalar loss w.r.t. every parameter leaf.
    // The graph itself is left untouched.
    GradMap backward(NodeId loss) const;

  private:
    NodeId push(Node n);
    std::vector<Node> nodes_;
};

}  // namespace noprop
