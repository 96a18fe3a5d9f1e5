#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace saldet {

inline double sigmoid(double x) {
    if (x >= 0) {
        double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + e^x) without overflow
inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// Logit of p after clamping p into [eps, 1-eps]; eps guards the open-interval
// domain so saturated probabilities stay finite.
inline double inverse_sigmoid(double p, double eps = 1e-3) {
    if (!(eps > 0.0) || !(eps < 0.5)) throw std::invalid_argument("inverse_sigmoid: eps must lie in (0, 0.5)");
    double q = std::clamp(p, eps, 1.0 - eps);
    return std::log(q) - std::log(1.0 - q);
}

// Largest logit magnitude representable by the clamped inverse sigmoid above;
// accumulated update logits are clamped here so repeated saturating updates
// can never push a sigmoid output to exactly 0 or 1.
inline constexpr double kLogitClamp = 6.906754778648554; // inverse_sigmoid(1 - 1e-3)

inline double clamp_logit(double x) { return std::clamp(x, -kLogitClamp, kLogitClamp); }

} // namespace saldet
