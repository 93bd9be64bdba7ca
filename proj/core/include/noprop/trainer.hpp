#pragma once

#include <functional>
#include <vector>

#include "noprop/dataset.hpp"
#include "noprop/graph.hpp"
#include "noprop/inference.hpp"
#include "noprop/metrics.hpp"
#include "noprop/model.hpp"
#include "noprop/rng.hpp"

namespace noprop {

struct TrainResult {
    std::vector<MetricsRow> rows;
    std::size_t peak_live_nodes = 0;
    double final_train_acc = MetricsRow::kAbsent;
    double final_test_acc = MetricsRow::kAbsent;
};

// Deterministic mini-batch order for one epoch, identical across workers.
std::vector<std::size_t> epoch_shuffle(std::size_t n, std::uint64_t seed, std::size_t epoch);

// ---- loss builders (the graphs one update step differentiates) ----

struct DtLossNodes {
    NodeId total, ce, kl, l2;
};

// Per-step objective at level t: cross-entropy of the head on a fresh
// z_T sample, the closed-form prior KL, and the SNR-difference-weighted
// denoising L2 on a z_{t-1} sample.
DtLossNodes build_dt_loss(Graph& g, ModelBundle& bundle, const Tensor& x, const std::vector<int>& y,
                          std::size_t t, double eta, RngStream z_prev_stream, RngStream z_T_stream,
                          bool train);

// The two halves of the same objective, built against caller-provided
// embedding-row / target nodes so the block-parallel path can evaluate them
// in separate graphs.
NodeId build_dt_l2_term(Graph& g, ModelBundle& bundle, NodeId rows, NodeId u_y, const Tensor& x,
                        std::size_t t, double eta, RngStream z_prev_stream, bool train);
std::pair<NodeId, NodeId> build_dt_head_terms(Graph& g, ModelBundle& bundle, NodeId rows, NodeId u_y,
                                              const std::vector<int>& y, RngStream z_T_stream);

struct CtLossNodes {
    NodeId total, ce, kl, l2;
};

// Continuous-time objective at per-example times t in [0,1], with the
// trainable schedule evaluated in-graph so its parameters receive gradients
// through the sample reparameterization, the SNR' weight, the KL and the CE.
CtLossNodes build_ct_loss(Graph& g, ModelBundle& bundle, const Tensor& x, const std::vector<int>& y,
                          const Tensor& t_batch, double eta, RngStream noise_stream, bool train);

struct FmLossNodes {
    NodeId total, base, anchor;  // anchor == -1 when absent
    bool anchored = false;
};

// Nodes of the Gaussian path the flow objective is built on.
struct FmPath {
    NodeId z_t, x, t, rows, z_0, z_1;
};

// v-field abstraction: production passes the flow block; oracle tests may
// pass an exact field (e.g. z_1 - z_0).
using FlowField = std::function<NodeId(Graph&, const FmPath&)>;

FmLossNodes build_fm_loss(Graph& g, ModelBundle& bundle, const Tensor& x, const std::vector<int>& y,
                          const Tensor& t_batch, RngStream noise_stream, bool train);
FmLossNodes build_fm_loss_with_field(Graph& g, ModelBundle& bundle, const FlowField& field,
                                     const Tensor& x, const std::vector<int>& y,
                                     const Tensor& t_batch, double sigma, RngStream noise_stream,
                                     bool anchored);

// Full residual chain in one graph, single cross-entropy at the head.
NodeId build_backprop_loss(Graph& g, ModelBundle& bundle, const Tensor& x, const std::vector<int>& y,
                           RngStream z0_stream, bool train);

// ---- training ----

// Trains bundle.cfg.epochs epochs (resuming after bundle.epochs_completed).
TrainResult train(ModelBundle& bundle, const DatasetHandle& train_ds, const DatasetHandle* test_ds,
                  MetricsWriter* metrics);

// Explicit epoch range [begin, end); used for resume equality checks.
TrainResult train_range(ModelBundle& bundle, const DatasetHandle& train_ds,
                        const DatasetHandle* test_ds, MetricsWriter* metrics, std::size_t epoch_begin,
                        std::size_t epoch_end);

// Peak live-graph-node count for one epoch of updates on a tiny synthetic
// problem; the block-local methods stay flat in T, the end-to-end baseline
// grows with it.
std::size_t probe_peak_live_nodes(Method method, std::size_t T);

}  // namespace noprop
