#pragma once

#include "saldet/autodiff.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace saldet {

struct GradCheckEntry {
    std::string param;
    std::int64_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_err = 0.0;
};

struct GradCheckResult {
    double max_rel_err = 0.0;
    GradCheckEntry worst;
    bool finite = true;
    std::string failure; // set when a non-finite value appeared

    bool ok(double tol) const { return finite && max_rel_err <= tol; }
};

// Central-difference check of d(build())/d(params). `build` must be a pure
// deterministic function of the current parameter values returning a scalar
// Var. Relative error uses a symmetric denominator with an absolute floor so
// near-zero gradient pairs compare by absolute difference.
inline GradCheckResult grad_check(const std::function<Var()>& build,
                                  const std::vector<std::pair<std::string, Var>>& params, double h = 1e-5,
                                  double floor = 1e-7) {
    GradCheckResult res;

    Var root = build();
    if (!root->value.all_finite()) {
        res.finite = false;
        res.failure = "forward value is not finite";
        return res;
    }
    for (auto& [name, p] : params) {
        Tensor& g = p->ensure_grad();
        std::fill(g.vec().begin(), g.vec().end(), 0.0);
    }
    backward(root);

    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (auto& [name, p] : params) analytic.push_back(p->ensure_grad());

    for (size_t pi = 0; pi < params.size(); ++pi) {
        const std::string& name = params[pi].first;
        const Var& p = params[pi].second;
        for (std::int64_t i = 0; i < p->value.numel(); ++i) {
            double saved = p->value[i];
            p->value[i] = saved + h;
            double fp = build()->value.item();
            p->value[i] = saved - h;
            double fm = build()->value.item();
            p->value[i] = saved;

            double num = (fp - fm) / (2.0 * h);
            double ana = analytic[pi][i];
            if (!std::isfinite(num) || !std::isfinite(ana)) {
                res.finite = false;
                res.failure = "non-finite derivative for " + name + "[" + std::to_string(i) + "]";
                return res;
            }
            double diff = std::fabs(num - ana);
            double denom = std::max(std::max(std::fabs(num), std::fabs(ana)), floor);
            double rel = diff <= floor ? 0.0 : diff / denom;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = {name, i, ana, num, rel};
            }
        }
    }
    return res;
}

} // namespace saldet
