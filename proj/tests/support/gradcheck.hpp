#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "adaptgot/tensor.hpp"

namespace testing_support {

namespace ad = adaptgot::ad;

struct GradcheckReport {
    double max_rel_err = 0.0;
    std::string worst;  // "<param>[index]"
    std::size_t checked = 0;
};

/// |a - n| / max(|a|, |n|, floor)
inline double rel_err(double a, double n, double floor = 1e-6) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Central differences, step 1e-5 * (1 + |x|), over every entry of every parameter.
/// `loss` builds a scalar on the given tape from the current parameter values.
inline GradcheckReport gradcheck(const std::vector<ad::Parameter*>& params,
                                 const std::function<ad::Var(ad::Tape&)>& loss, double floor = 1e-6) {
    ad::Gradients grads;
    {
        ad::Tape t;
        grads = t.backward(loss(t));
    }
    const auto eval = [&] {
        ad::Tape t;
        return loss(t).scalar();
    };
    GradcheckReport r;
    for (auto* p : params) {
        const auto it = grads.find(p);
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double x0 = p->value[i];
            const double h = 1e-5 * (1.0 + std::abs(x0));
            p->value[i] = x0 + h;
            const double fp = eval();
            p->value[i] = x0 - h;
            const double fm = eval();
            p->value[i] = x0;
            const double num = (fp - fm) / (2.0 * h);
            const double ana = it == grads.end() ? 0.0 : it->second[i];
            const double e = rel_err(ana, num, floor);
            ++r.checked;
            if (e > r.max_rel_err) {
                r.max_rel_err = e;
                r.worst = p->name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return r;
}

}  // namespace testing_support
