#include "noprop/optim.hpp"

#include <cmath>

#include "noprop/errors.hpp"

namespace noprop {

void OptimizerConfig::validate() const {
    if (!(lr > 0)) throw ConfigError("optimizer: learning rate must be > 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
        throw ConfigError("optimizer: betas must be in [0,1)");
    if (!(eps > 0)) throw ConfigError("optimizer: eps must be > 0");
    if (weight_decay < 0) throw ConfigError("optimizer: weight decay must be >= 0");
}

void ParamStore::add(const std::string& name, Tensor value, bool trainable) {
    if (index_.count(name)) throw NameError("parameter '" + name + "' already exists");
    value.require_finite("param " + name);
    Entry e;
    e.value = std::move(value);
    e.trainable = trainable;
    index_.emplace(name, std::move(e));
    names_.push_back(name);
}

Tensor& ParamStore::value(const std::string& name) { return entry(name).value; }
const Tensor& ParamStore::value(const std::string& name) const { return entry(name).value; }

ParamStore::Entry& ParamStore::entry(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw NameError("unknown parameter '" + name + "'");
    return it->second;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw NameError("unknown parameter '" + name + "'");
    return it->second;
}

std::size_t ParamStore::num_scalars() const {
    std::size_t n = 0;
    for (const auto& name : names_) n += index_.at(name).value.numel();
    return n;
}

void optimizer_step(ParamStore& store, const GradMap& grads, const OptimizerConfig& cfg) {
    cfg.validate();
    for (const auto& [name, grad] : grads) {
        auto& e = store.entry(name);
        if (!e.trainable) throw NameError("gradient for non-trainable entry '" + name + "'");
        if (!grad.same_shape(e.value))
            throw ShapeError("gradient shape " + shape_str(grad.shape()) + " vs parameter " +
                             shape_str(e.value.shape()) + " for '" + name + "'");
        if (e.m1.numel() == 0) {
            e.m1 = Tensor(e.value.shape(), real(0));
            e.m2 = Tensor(e.value.shape(), real(0));
        }
        e.step += 1;
        const double b1 = cfg.beta1, b2 = cfg.beta2;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(e.step));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(e.step));
        for (std::size_t i = 0; i < e.value.numel(); ++i) {
            double g = static_cast<double>(grad[i]);
            const double theta = static_cast<double>(e.value[i]);
            if (cfg.kind == OptimizerKind::Adam) g += cfg.weight_decay * theta;
            const double m1 = b1 * static_cast<double>(e.m1[i]) + (1.0 - b1) * g;
            const double m2 = b2 * static_cast<double>(e.m2[i]) + (1.0 - b2) * g * g;
            e.m1[i] = static_cast<real>(m1);
            e.m2[i] = static_cast<real>(m2);
            double update = cfg.lr * (m1 / bc1) / (std::sqrt(m2 / bc2) + cfg.eps);
            if (cfg.kind == OptimizerKind::AdamW) update += cfg.lr * cfg.weight_decay * theta;
            e.value[i] = static_cast<real>(theta - update);
        }
        e.value.require_finite("optimizer step on " + name);
    }
}

NodeId graph_param(Graph& g, const ParamStore& store, const std::string& tag,
                   const std::string& name) {
    return g.leaf_param(tag + "/" + name, store.value(name));
}

GradMap strip_prefix(const GradMap& grads, const std::string& tag) {
    GradMap out;
    const std::string prefix = tag + "/";
    for (const auto& [name, grad] : grads)
        if (name.rfind(prefix, 0) == 0) out[name.substr(prefix.size())] = grad;
    return out;
}

}  // namespace noprop
