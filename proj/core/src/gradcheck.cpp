#include "noprop/gradcheck.hpp"

#include <cmath>

namespace noprop {

GradCheckReport grad_check(const std::vector<std::pair<std::string, ParamStore*>>& stores,
                           const GraphBuilder& build, double h) {
    Graph g;
    const NodeId loss = build(g);
    const GradMap grads = g.backward(loss);

    auto loss_value = [&] {
        Graph scratch;
        return static_cast<double>(scratch.value(build(scratch)).item());
    };

    GradCheckReport report;
    for (const auto& [tag, store] : stores) {
        for (const auto& name : store->names()) {
            auto& entry = store->entry(name);
            if (!entry.trainable) continue;
            const std::string full = tag + "/" + name;
            const auto it = grads.find(full);
            for (std::size_t i = 0; i < entry.value.numel(); ++i) {
                const real saved = entry.value[i];
                entry.value[i] = saved + static_cast<real>(h);
                const double fp = loss_value();
                entry.value[i] = saved - static_cast<real>(h);
                const double fm = loss_value();
                entry.value[i] = saved;
                const double fd = (fp - fm) / (2.0 * h);
                const double ad = it == grads.end() ? 0.0 : static_cast<double>(it->second[i]);
                const double rel =
                    std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
                ++report.elements_checked;
                if (rel > report.max_rel_error) {
                    report.max_rel_error = rel;
                    report.worst_param = full + "[" + std::to_string(i) + "]";
                }
            }
        }
    }
    return report;
}

}  // namespace noprop
