#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "noprop/graph.hpp"
#include "noprop/optim.hpp"

namespace noprop {

// Rebuilds the scalar-loss graph from current parameter values.
using GraphBuilder = std::function<NodeId(Graph&)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t elements_checked = 0;

    bool pass(double tolerance) const { return max_rel_error < tolerance; }
};

// Compares reverse-mode gradients against central finite differences
// (loss(p+h) - loss(p-h)) / 2h for every trainable element of the given
// stores. Relative error uses max(1, |a|, |b|) in the denominator.
GradCheckReport grad_check(const std::vector<std::pair<std::string, ParamStore*>>& stores,
                           const GraphBuilder& build, double h = 1e-6);

}  // namespace noprop
