#include <doctest.h>

#include <cstring>

#include "noprop/blocks.hpp"
#include "noprop/checks.hpp"
#include "noprop/embedding.hpp"

using namespace noprop;

namespace {

DenoiseBlock make_block(DenoiseBlock::Variant variant, std::size_t m = 2, std::size_t d = 2,
                        std::uint64_t seed = 1) {
    DenoiseBlock b(variant, BlockConfig::mlp(8), m, d, /*c=*/2, /*h=*/1, /*w=*/1);
    b.init_params(seed);
    return b;
}

}  // namespace

TEST_CASE("discrete block output is a convex combination of one-hot rows") {
    DenoiseBlock b = make_block(DenoiseBlock::Variant::DiscreteTime, 3, 3);
    const EmbeddingMatrix embed = EmbeddingMatrix::one_hot(3);
    RngStream s = make_stream(2, "in");
    const Tensor z = Tensor::randn(Shape{4, 3}, s);
    const Tensor x = Tensor::randn(Shape{4, 2}, s);
    const Tensor u = b.forward(z, x, 0.0, false, embed.rows());
    for (std::size_t i = 0; i < 4; ++i) {
        double sum = 0;
        for (std::size_t k = 0; k < 3; ++k) {
            sum += static_cast<double>(u[i * 3 + k]);
            CHECK(u[i * 3 + k] >= 0);
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("eval-mode forward is bit-identical across calls") {
    DenoiseBlock b = make_block(DenoiseBlock::Variant::DiscreteTime);
    const EmbeddingMatrix embed = EmbeddingMatrix::one_hot(2);
    RngStream s = make_stream(3, "in");
    const Tensor z = Tensor::randn(Shape{2, 2}, s);
    const Tensor x = Tensor::randn(Shape{2, 2}, s);
    const Tensor a = b.forward(z, x, 0.0, false, embed.rows());
    const Tensor b2 = b.forward(z, x, 0.0, false, embed.rows());
    CHECK(std::memcmp(a.data(), b2.data(), a.numel() * sizeof(real)) == 0);
}

TEST_CASE("blocks have isolated parameter stores") {
    DenoiseBlock b1 = make_block(DenoiseBlock::Variant::DiscreteTime, 2, 2, 1);
    DenoiseBlock b2 = make_block(DenoiseBlock::Variant::DiscreteTime, 2, 2, 2);
    const EmbeddingMatrix embed = EmbeddingMatrix::one_hot(2);
    RngStream s = make_stream(5, "in");
    const Tensor z = Tensor::randn(Shape{2, 2}, s);
    const Tensor x = Tensor::randn(Shape{2, 2}, s);

    const Tensor out1 = b1.forward(z, x, 0.0, false, embed.rows());
    // perturbing the *other* block's parameters cannot change this block
    for (const auto& name : b2.params().names()) b2.params().value(name)[0] += real(0.5);
    const Tensor out1b = b1.forward(z, x, 0.0, false, embed.rows());
    CHECK(std::memcmp(out1.data(), out1b.data(), out1.numel() * sizeof(real)) == 0);
    // perturbing this block's parameters does
    b1.params().value("fuse.out.b")[0] += real(0.5);
    const Tensor out1c = b1.forward(z, x, 0.0, false, embed.rows());
    CHECK(max_abs_diff(out1, out1c) > 0);
}

TEST_CASE("continuous block distinguishes t = 0 from t = 1") {
    DenoiseBlock b = make_block(DenoiseBlock::Variant::ContinuousTime);
    const EmbeddingMatrix embed = EmbeddingMatrix::one_hot(2);
    RngStream s = make_stream(7, "in");
    const Tensor z = Tensor::randn(Shape{1, 2}, s);
    const Tensor x = Tensor::randn(Shape{1, 2}, s);
    const Tensor at0 = b.forward(z, x, 0.0, false, embed.rows());
    const Tensor at1 = b.forward(z, x, 1.0, false, embed.rows());
    CHECK(max_abs_diff(at0, at1) > 1e-9);

    // convex combination at any t
    for (const double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        const Tensor u = b.forward(z, x, t, false, embed.rows());
        const double sum = static_cast<double>(u[0]) + static_cast<double>(u[1]);
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("flow block is linear in the logits") {
    DenoiseBlock b = make_block(DenoiseBlock::Variant::Flow, 3, 3);
    EmbeddingMatrix embed = EmbeddingMatrix::one_hot(3);
    RngStream s = make_stream(9, "in");
    const Tensor z = Tensor::randn(Shape{1, 3}, s);
    const Tensor x = Tensor::randn(Shape{1, 2}, s);

    // zero logits -> zero output
    auto& p = b.params();
    Tensor zero_w(p.value("fuse.out.w").shape(), real(0));
    Tensor zero_b(p.value("fuse.out.b").shape(), real(0));
    p.value("fuse.out.w") = zero_w;
    p.value("fuse.out.b") = zero_b;
    const Tensor v0 = b.forward(z, x, 0.3, false, embed.rows());
    for (std::size_t k = 0; k < 3; ++k) CHECK(v0[k] == real(0));

    // one-hot logits select the matching embedding row
    p.value("fuse.out.b")[1] = real(1);
    const Tensor v1 = b.forward(z, x, 0.3, false, embed.rows());
    CHECK(v1[0] == real(0));
    CHECK(v1[1] == real(1));
    CHECK(v1[2] == real(0));

    // doubling the logits doubles the output
    p.value("fuse.out.b")[1] = real(2);
    const Tensor v2 = b.forward(z, x, 0.3, false, embed.rows());
    for (std::size_t k = 0; k < 3; ++k)
        CHECK(static_cast<double>(v2[k]) == doctest::Approx(2.0 * static_cast<double>(v1[k])).epsilon(1e-12));
}

TEST_CASE("full blocks pass the finite-difference gate") {
    for (const auto& r : checks::block_grad_checks(4)) {
        INFO(r.name, " max rel err ", r.metric, " ", r.note);
        CHECK(r.pass);
    }
}

TEST_CASE("prototype-dimension labels run through the conv pathway") {
    // embedding dimension equals the image dimension: the noised label is
    // treated as an image and embedded by its own conv stack
    BlockConfig cfg = BlockConfig::conv_default();
    cfg.conv1_channels = 2;
    cfg.conv2_channels = 3;
    cfg.feat_width = 6;
    cfg.fusion_width = 6;
    const std::size_t h = 10, w = 10;
    DenoiseBlock b(DenoiseBlock::Variant::DiscreteTime, cfg, 2, h * w, 1, h, w);
    b.init_params(71);
    CHECK(b.params().contains("lab.conv1.w"));

    RngStream s = make_stream(71, "in");
    const Tensor z = Tensor::randn(Shape{2, h * w}, s);
    const Tensor x = Tensor::randn(Shape{2, 1, h, w}, s);
    Tensor rows = Tensor::randn(Shape{2, h * w}, s);
    const Tensor u = b.forward(z, x, 0.0, false, rows);
    CHECK(u.shape() == Shape{2, h * w});
    u.require_finite("prototype conv forward");
}
