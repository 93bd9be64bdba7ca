#pragma once

#include <functional>
#include <vector>

#include "noprop/dataset.hpp"
#include "noprop/model.hpp"
#include "noprop/rng.hpp"
#include "noprop/schedule.hpp"
#include "noprop/tensor.hpp"

namespace noprop {

enum class DecisionRule { MethodDefault, HeadArgmax, NearestEmbedding };

struct InferenceConfig {
    std::size_t steps = 1000;  // integration grid for ct/fm; dt uses its schedule's T
    // MethodDefault resolves to head-argmax except for fm (nearest embedding).
    DecisionRule decision = DecisionRule::MethodDefault;

    void validate() const;
};

struct Prediction {
    int label = 0;
    Tensor probs;  // empty under the nearest-embedding rule
};

// One stochastic forward step: z_next = a * u_hat + b * z_prev + sqrt(c) * eps.
Tensor dt_step_affine(const Tensor& z_prev, const Tensor& u_hat, const PosteriorCoefficients& coeffs,
                      RngStream& stream);

// Spec-shaped single-step helper: runs the block on (z_prev, x) in eval mode
// and applies the affine-plus-noise update.
Tensor dt_forward_step(const Tensor& z_prev, const Tensor& x, DenoiseBlock& block,
                       const EmbeddingMatrix& embed, const PosteriorCoefficients& coeffs,
                       RngStream& stream);

// Forward Euler over the unit interval: z += (1/steps) * field(z, i/steps).
Tensor euler_integrate(const std::function<Tensor(const Tensor&, double)>& field, Tensor z,
                       std::size_t steps);

// Batched label prediction. `x` is [B,C,H,W] (conv) or [B,dim] (mlp).
std::vector<Prediction> infer_dt(ModelBundle& bundle, const Tensor& x, const InferenceConfig& cfg,
                                 RngStream stream);
std::vector<Prediction> infer_ct(ModelBundle& bundle, const Tensor& x, const InferenceConfig& cfg,
                                 RngStream stream);
std::vector<Prediction> infer_fm(ModelBundle& bundle, const Tensor& x, const InferenceConfig& cfg,
                                 RngStream stream);
// Deterministic residual chain of the end-to-end baseline (noise only at z_0).
std::vector<Prediction> infer_backprop(ModelBundle& bundle, const Tensor& x,
                                       const InferenceConfig& cfg, RngStream stream);

// Dispatch on bundle.method.
std::vector<Prediction> infer(ModelBundle& bundle, const Tensor& x, const InferenceConfig& cfg,
                              RngStream stream);

// Argmax with lowest-index tie break.
int decide_head_argmax(const Tensor& probs_row);
int decide_nearest_embedding(const Tensor& z_row, const Tensor& rows);

// Accuracy over (a deterministic subsample of) a dataset.
double evaluate_accuracy(ModelBundle& bundle, const DatasetHandle& ds, const InferenceConfig& cfg,
                         std::uint64_t seed, std::size_t max_examples = 0);

}  // namespace noprop
