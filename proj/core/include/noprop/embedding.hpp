#pragma once

#include <string>

#include "noprop/dataset.hpp"
#include "noprop/graph.hpp"
#include "noprop/optim.hpp"
#include "noprop/tensor.hpp"

namespace noprop {

enum class EmbedMode { OneHotFixed, LearnedDim, Prototype };

const char* embed_mode_name(EmbedMode mode);
EmbedMode embed_mode_from_name(const std::string& name);

// Class-embedding table W_Embed. Rows (and their optimizer slots, when the
// mode is trainable) live in `store` under the name "W_Embed".
struct EmbeddingMatrix {
    static constexpr const char* kName = "W_Embed";

    EmbedMode mode = EmbedMode::OneHotFixed;
    std::size_t m = 0;  // class count
    std::size_t d = 0;  // embedding dimension
    ParamStore store;

    bool trainable() const { return mode != EmbedMode::OneHotFixed; }
    const Tensor& rows() const { return store.value(kName); }
    Tensor& rows() { return store.value(kName); }

    // Row y (the standard basis vector in one-hot mode).
    Tensor embed(int y) const;

    // The rows as a graph node: a parameter leaf (tagged "embed") when
    // trainable, a constant otherwise.
    NodeId rows_node(Graph& g) const;

    static EmbeddingMatrix one_hot(std::size_t m);
    // Orthogonal rows when d >= m, Gaussian / sqrt(d) otherwise.
    static EmbeddingMatrix learned(std::size_t m, std::size_t d, std::uint64_t seed);
    // d = flattened image dimension; each row is the training image with the
    // smallest median distance to the other images of its class (ties broken
    // by lowest dataset index).
    static EmbeddingMatrix prototype(const DatasetHandle& dataset);
};

constexpr const char* kEmbedTag = "embed";

// Linear map d -> m, stored in a ParamStore under "head/...".
struct SoftmaxHead {
    static constexpr const char* kW = "head.w";
    static constexpr const char* kB = "head.b";

    static void init_params(ParamStore& store, std::size_t d, std::size_t m, std::uint64_t seed);

    // logits node [B, m] for z [B, d]; params registered under `tag`.
    static NodeId logits(Graph& g, const ParamStore& store, const std::string& tag, NodeId z);

    // probability vector for a single z
    static Tensor probs(const ParamStore& store, const Tensor& z);
};

// Shares the linear map of SoftmaxHead; class probability falls off with the
// squared distance between the reconstructed embedding and each class row.
struct RadialHead {
    double sigma = 1.0;

    NodeId logits(Graph& g, const ParamStore& store, const std::string& tag, NodeId z,
                  NodeId embed_rows) const;
    Tensor probs(const ParamStore& store, const EmbeddingMatrix& embed, const Tensor& z) const;
};

enum class HeadKind { Softmax, Radial };

const char* head_kind_name(HeadKind kind);
HeadKind head_kind_from_name(const std::string& name);

}  // namespace noprop
