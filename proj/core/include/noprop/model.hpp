#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "noprop/blocks.hpp"
#include "noprop/dataset.hpp"
#include "noprop/embedding.hpp"
#include "noprop/optim.hpp"
#include "noprop/schedule.hpp"

namespace noprop {

enum class Method { DT, CT, FM, Backprop };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

struct TrainConfig {
    Method method = Method::DT;
    std::size_t T = 10;        // diffusion steps (DT) / residual chain length (backprop)
    std::size_t batch = 128;
    std::size_t epochs = 100;
    double eta = 0.1;          // denoising loss weight (dt/ct)
    OptimizerConfig optimizer;
    EmbedMode embed_mode = EmbedMode::OneHotFixed;
    std::size_t embed_dim = 20;  // learned mode only
    HeadKind head = HeadKind::Softmax;
    double radial_sigma = 1.0;
    std::uint64_t seed = 0;
    bool parallel = false;
    std::size_t workers = 4;
    double fm_sigma = 0.1;  // flow path noise
    BlockConfig block;
    std::size_t gamma_hidden = 8;
    std::size_t inference_steps = 1000;  // ct/fm integration grid
    std::size_t eval_train_max = 10000;  // train-accuracy subsample cap
    bool eval_each_epoch = true;
    bool wall_clock = false;  // real timestamps in metrics break rerun byte-equality

    void validate() const;
};

// Method-conditional defaults: ct/fm switch to plain Adam and eta = 1.
void apply_method_defaults(TrainConfig& cfg);

// Every trainable store of one model: per-step blocks (or the single shared
// block), the classification head, the class embeddings, schedule parameters
// and the baseline mixing weights.
struct ModelBundle {
    Method method = Method::DT;
    TrainConfig cfg;
    EmbeddingMatrix embed;
    std::vector<DenoiseBlock> blocks;
    ParamStore head;
    ParamStore schedule_params;  // ct only
    DiscreteSchedule sched;      // dt / backprop
    ParamStore baseline;         // backprop: "w" of shape [T,1]
    std::size_t img_c = 1, img_h = 1, img_w = 1;  // input geometry the blocks were built for
    std::uint64_t seed = 0;
    bool trained = false;
    std::size_t epochs_completed = 0;

    std::size_t num_classes() const { return embed.m; }
    std::size_t embed_dim() const { return embed.d; }

    static ModelBundle create(const TrainConfig& cfg, const DatasetHandle& dataset);
};

constexpr const char* kHeadTag = "head";
constexpr const char* kSchedTag = "sched";
constexpr const char* kBaseTag = "base";

}  // namespace noprop
