#pragma once

#include <cstdint>
#include <string>

#include "noprop/embedding.hpp"
#include "noprop/graph.hpp"
#include "noprop/optim.hpp"
#include "noprop/tensor.hpp"

namespace noprop {

enum class BlockArch { Conv, Mlp };

struct BlockConfig {
    BlockArch arch = BlockArch::Conv;
    std::size_t conv1_channels = 32;
    std::size_t conv2_channels = 64;
    std::size_t feat_width = 256;      // per-pathway feature width
    std::size_t fusion_width = 256;    // fully-connected stack after concat
    std::size_t time_embed_dim = 64;   // sinusoidal width (continuous variants)
    std::size_t time_feat_width = 64;
    double dropout_p = 0.0;            // extra conv-stage dropout, off by default
    bool batchnorm = true;             // continuous variants switch this off

    static BlockConfig conv_default() { return {}; }
    static BlockConfig mlp(std::size_t width = 64) {
        BlockConfig c;
        c.arch = BlockArch::Mlp;
        c.feat_width = width;
        c.fusion_width = width;
        c.time_feat_width = width;
        c.batchnorm = false;
        return c;
    }
};

// One denoising block. The discrete-time variant maps (z_prev, x) to a convex
// combination of class embeddings; the continuous-time variant additionally
// conditions on t; the flow variant combines embeddings with unrestricted
// logit weights so its output can point anywhere in the row space.
class DenoiseBlock {
  public:
    enum class Variant { DiscreteTime, ContinuousTime, Flow };

    DenoiseBlock() = default;
    DenoiseBlock(Variant variant, BlockConfig cfg, std::size_t m, std::size_t d, std::size_t img_c,
                 std::size_t img_h, std::size_t img_w);

    void init_params(std::uint64_t seed);

    Variant variant() const { return variant_; }
    const BlockConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    std::size_t embed_dim() const { return d_; }
    std::size_t num_classes() const { return m_; }

    // Unnormalized class logits [B, m]. `x` is [B,C,H,W] for the conv arch
    // and [B, img_dim] for the MLP arch; `t` is a [B,1] node for continuous
    // variants (ignored for discrete time). In train mode batchnorm running
    // stats are refreshed in-place and dropout draws from `stream`.
    NodeId forward_logits(Graph& g, const std::string& tag, NodeId z, NodeId x, NodeId t, bool train,
                          RngStream stream = {});

    // Block output in embedding space: softmax-weighted rows for diffusion
    // variants, plain logit-weighted rows for the flow variant.
    NodeId forward_output(Graph& g, const std::string& tag, NodeId z, NodeId x, NodeId t, bool train,
                          NodeId embed_rows, RngStream stream = {});

    // Whole-tensor forward through a scratch graph (eval-style convenience).
    Tensor forward(const Tensor& z, const Tensor& x, double t, bool train, const Tensor& embed_rows);

  private:
    NodeId image_pathway(Graph& g, const std::string& tag, NodeId x, bool train, RngStream stream);
    NodeId label_pathway(Graph& g, const std::string& tag, NodeId z, bool train);
    NodeId conv_stack(Graph& g, const std::string& tag, const std::string& prefix, NodeId x,
                      bool train, RngStream stream);
    NodeId fc_bn_relu(Graph& g, const std::string& tag, const std::string& prefix, NodeId x,
                      bool train);
    NodeId bn(Graph& g, const std::string& tag, const std::string& prefix, NodeId x, bool train);
    void init_conv_stack(const std::string& prefix, std::size_t in_c, std::size_t h, std::size_t w,
                         RngStream& stream);
    void init_fc(const std::string& prefix, std::size_t in, std::size_t out, RngStream& stream,
                 bool with_bn);

    bool has_time() const { return variant_ != Variant::DiscreteTime; }
    bool label_as_image() const;

    Variant variant_ = Variant::DiscreteTime;
    BlockConfig cfg_;
    std::size_t m_ = 0, d_ = 0;
    std::size_t img_c_ = 1, img_h_ = 1, img_w_ = 1;
    ParamStore params_;
};

}  // namespace noprop
