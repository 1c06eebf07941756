#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adaptgot/tensor.hpp"

namespace adaptgot::ad {

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamMoments {
    Tensor m;
    Tensor v;
};

/// One bias-corrected Adam update of `param` in place; `step` is 1-based.
inline void adam_step(Tensor& param, const Tensor& grad, AdamMoments& mom, std::int64_t step, const AdamConfig& cfg) {
    if (!grad.same_shape(param)) throw ValidationError("adam_step: gradient " + grad.shape_str() + " vs parameter " + param.shape_str());
    if (mom.m.empty()) mom.m = Tensor(param.rows(), param.cols());
    if (mom.v.empty()) mom.v = Tensor(param.rows(), param.cols());
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        mom.m[i] = cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * grad[i];
        mom.v[i] = cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double mhat = mom.m[i] / c1;
        const double vhat = mom.v[i] / c2;
        param[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

/// Adam over a fixed, ordered parameter list. Parameters absent from the
/// gradient map are treated as having zero gradient.
class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    const AdamConfig& config() const noexcept { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    std::int64_t steps() const noexcept { return steps_; }

    void step(const std::vector<Parameter*>& params, const Gradients& grads) {
        ++steps_;
        for (Parameter* p : params) {
            const auto it = grads.find(p);
            const Tensor zero(p->value.rows(), p->value.cols());
            adam_step(p->value, it == grads.end() ? zero : it->second, moments_[p->name], steps_, cfg_);
        }
    }

    std::map<std::string, AdamMoments>& moments() noexcept { return moments_; }
    const std::map<std::string, AdamMoments>& moments() const noexcept { return moments_; }
    void restore(std::int64_t steps, std::map<std::string, AdamMoments> moments) {
        steps_ = steps;
        moments_ = std::move(moments);
    }

private:
    AdamConfig cfg_;
    std::int64_t steps_ = 0;
    std::map<std::string, AdamMoments> moments_;
};

}  // namespace adaptgot::ad
