#pragma once

// Central finite-difference verification of reverse-mode gradients.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vtr/tensor.hpp"

namespace vtr {

struct GradCheckEntry {
    std::string param;
    std::size_t worst_index = 0;
    Scalar max_rel_err = 0.0;
    Scalar analytic = 0.0;
    Scalar numeric = 0.0;
    bool non_finite = false;
};

struct GradCheckReport {
    bool pass = true;
    std::vector<GradCheckEntry> entries;

    const GradCheckEntry* worst() const {
        const GradCheckEntry* w = nullptr;
        for (const auto& e : entries)
            if (!w || e.max_rel_err > w->max_rel_err) w = &e;
        return w;
    }
};

// Compares reverse-mode gradients of f() against central differences for every
// element of every parameter. f must rebuild its graph from the parameters'
// current values on each call.
inline GradCheckReport finite_diff_check(const std::function<Tensor()>& f,
                                         const std::vector<std::pair<std::string, Tensor>>& params,
                                         Scalar h, Scalar tol) {
    if (!(h > 0.0)) throw TensorError("finite_diff_check: h must be positive");
    GradCheckReport report;
    auto analytic = gradient(f(), params);
    for (auto& [name, p] : params) {
        GradCheckEntry entry;
        entry.param = name;
        Tensor& pm = const_cast<Tensor&>(p);
        const auto& ga = analytic.at(name);
        for (std::size_t i = 0; i < pm.size(); ++i) {
            const Scalar saved = pm.mutable_data()[i];
            pm.mutable_data()[i] = saved + h;
            const Scalar fp = f().item();
            pm.mutable_data()[i] = saved - h;
            const Scalar fm = f().item();
            pm.mutable_data()[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                entry.non_finite = true;
                entry.worst_index = i;
                report.pass = false;
                break;
            }
            const Scalar num = (fp - fm) / (2.0 * h);
            const Scalar denom = std::max({std::abs(num), std::abs(ga[i]), Scalar(1e-8)});
            const Scalar rel = std::abs(num - ga[i]) / denom;
            if (rel > entry.max_rel_err) {
                entry.max_rel_err = rel;
                entry.worst_index = i;
                entry.analytic = ga[i];
                entry.numeric = num;
            }
        }
        if (entry.max_rel_err > tol) report.pass = false;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace vtr
