#pragma once

#include <functional>
#include <vector>

#include "kbdm/tensor.hpp"

namespace kbdm {

/// Central-difference check of hand-derived gradients.
///
/// `loss` evaluates the scalar objective from the current parameter values
/// without touching gradients; `compute_grads` zeroes the gradients and fills
/// them analytically. Returns the max over all parameter elements of
/// |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double finite_diff_check(const std::function<double()>& loss,
                                const std::function<void()>& compute_grads,
                                const std::vector<Parameter*>& params,
                                double epsilon = 1e-5) {
    if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
        throw ConfigError("finite_diff_check: epsilon " + std::to_string(epsilon) +
                          " outside [1e-7, 1e-3]");
    }
    compute_grads();
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad);

    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& value = params[pi]->value;
        for (std::size_t i = 0; i < value.numel(); ++i) {
            const double saved = value.data[i];
            value.data[i] = saved + epsilon;
            const double up = loss();
            value.data[i] = saved - epsilon;
            const double down = loss();
            value.data[i] = saved;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError("finite_diff_check: non-finite objective at parameter " +
                                   params[pi]->name);
            }
            const double numeric = (up - down) / (2.0 * epsilon);
            const double a = analytic[pi].data[i];
            const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace kbdm
