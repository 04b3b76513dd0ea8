#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "miniwm/nn.hpp"
#include "miniwm/rng.hpp"

namespace miniwm::testutil {

struct GradCheckResult {
    double max_rel_err = 0.0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
    std::string worst_param;
    int checked = 0;
};

// Central finite differences on randomly chosen parameter entries against the
// analytic gradient of `loss(params) -> (scalar value, grads by name)`.
// The loss closure must be deterministic.
inline GradCheckResult gradcheck(
    Params<double>& params,
    const std::function<double(Params<double>&, std::map<std::string, Tensor<double>>*)>& loss,
    int n_probes, Rng& rng, double h = 1e-4) {
    std::map<std::string, Tensor<double>> grads;
    loss(params, &grads);

    GradCheckResult res;
    std::vector<std::string> names = params.names();
    for (int probe = 0; probe < n_probes; ++probe) {
        const std::string& name = names[rng.below(names.size())];
        Tensor<double>& p = params.at(name);
        if (p.numel() == 0) continue;
        int64_t i = int64_t(rng.below(uint64_t(p.numel())));

        double orig = p[i];
        p[i] = orig + h;
        double up = loss(params, nullptr);
        p[i] = orig - h;
        double down = loss(params, nullptr);
        p[i] = orig;

        double numeric = (up - down) / (2.0 * h);
        double analytic = 0.0;
        auto it = grads.find(name);
        if (it != grads.end()) analytic = it->second[i];

        double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-8});
        double rel = std::abs(numeric - analytic) / denom;
        if (rel > res.max_rel_err) {
            res.max_rel_err = rel;
            res.analytic_at_worst = analytic;
            res.numeric_at_worst = numeric;
            res.worst_param = name + "[" + std::to_string(i) + "]";
        }
        ++res.checked;
    }
    return res;
}

}  // namespace miniwm::testutil
