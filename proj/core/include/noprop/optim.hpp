#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "noprop/graph.hpp"
#include "noprop/tensor.hpp"

namespace noprop {

enum class OptimizerKind { AdamW, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::AdamW;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-3;

    void validate() const;
};

// Named parameter tensors with per-parameter optimizer slots. Entries marked
// non-trainable hold persistent state (e.g. batchnorm running stats) that the
// optimizer never touches but checkpoints must carry.
class ParamStore {
  public:
    struct Entry {
        Tensor value;
        bool trainable = true;
        Tensor m1;  // first moment, sized on first optimizer use
        Tensor m2;  // second moment
        std::int64_t step = 0;
    };

    void add(const std::string& name, Tensor value, bool trainable = true);
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    Tensor& value(const std::string& name);
    const Tensor& value(const std::string& name) const;
    Entry& entry(const std::string& name);
    const Entry& entry(const std::string& name) const;

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }

    std::size_t num_scalars() const;

  private:
    std::vector<std::string> names_;  // insertion order, for stable serialization
    std::unordered_map<std::string, Entry> index_;
};

// One optimizer step over the gradients in `grads`. Keys must name trainable
// entries of `store`; a missing name raises NameError. AdamW applies decay
// directly to the parameter; Adam folds weight decay into the gradient.
void optimizer_step(ParamStore& store, const GradMap& grads, const OptimizerConfig& cfg);

// Register a store parameter as a graph leaf named "<tag>/<name>".
NodeId graph_param(Graph& g, const ParamStore& store, const std::string& tag, const std::string& name);

// Route a gradient map keyed "<tag>/<name>" back to plain store names.
GradMap strip_prefix(const GradMap& grads, const std::string& tag);

}  // namespace noprop
