#pragma once

#include "saldet/autodiff.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace saldet {

struct NamedParam {
    std::string name;
    Var var;
};

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
};

// AdamW with decoupled weight decay and bias-corrected moments. Update order
// and accumulation are fixed, so given identical gradient streams the
// parameter trajectories are bit-identical.
class AdamW {
public:
    using Options = AdamWOptions;

    AdamW(std::vector<NamedParam> params, Options opt = {}) : params_(std::move(params)), opt_(opt) {
        states_.reserve(params_.size());
        for (auto& p : params_) {
            states_.push_back({Tensor(p.var->value.shape()), Tensor(p.var->value.shape())});
            p.var->ensure_grad();
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            Tensor& g = p.var->ensure_grad();
            std::fill(g.vec().begin(), g.vec().end(), 0.0);
        }
    }

    void step(double lr) {
        ++t_;
        double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Tensor& w = params_[i].var->value;
            const Tensor& g = params_[i].var->ensure_grad();
            Tensor& m = states_[i].m;
            Tensor& v = states_[i].v;
            for (std::int64_t j = 0; j < w.numel(); ++j) {
                m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g[j];
                v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
                double mhat = m[j] / bc1;
                double vhat = v[j] / bc2;
                w[j] -= lr * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * w[j]);
            }
        }
    }

    std::int64_t steps_taken() const { return t_; }
    const std::vector<NamedParam>& params() const { return params_; }

private:
    struct State {
        Tensor m, v;
    };
    std::vector<NamedParam> params_;
    Options opt_;
    std::vector<State> states_;
    std::int64_t t_ = 0;
};

} // namespace saldet
