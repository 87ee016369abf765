// SPDX-License-Identifier: Apache-2.0
//
// Shared test helpers: the central-difference gradient oracle and small
// tensor builders. The oracle only re-evaluates the forward function and is
// independent of the tape's backward rules it checks.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dld/rng.hpp"
#include "dld/tensor.hpp"

namespace dld::testing {

inline Tensor random_tensor(Shape shape, RngStream& stream, bool requires_grad = true,
                            double scale = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (std::int64_t i = 0; i < t.numel(); ++i) t.data()[i] = scale * stream.next_normal();
    return t;
}

// Relative error with a unit floor so near-zero gradients compare absolutely.
inline double grad_rel_err(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
    return std::fabs(analytic - numeric) / denom;
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    std::string where;
};

// `forward` must rebuild the whole graph from the given leaf tensors and
// return the scalar loss value. `leaves` are perturbed in place.
inline GradCheckResult check_gradients(const std::function<double()>& forward,
                                       const std::vector<std::pair<std::string, Tensor>>& leaves,
                                       const std::function<void()>& backward_into_leaves,
                                       double step = 1e-5) {
    for (const auto& [name, leaf] : leaves) {
        Tensor t = leaf;
        t.zero_grad();
    }
    backward_into_leaves();
    GradCheckResult result;
    for (const auto& [name, leaf] : leaves) {
        Tensor t = leaf;
        const std::vector<double> analytic = t.grad();
        for (std::int64_t i = 0; i < t.numel(); ++i) {
            const double saved = t.data()[i];
            t.data()[i] = saved + step;
            const double up = forward();
            t.data()[i] = saved - step;
            const double down = forward();
            t.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double err = grad_rel_err(analytic[static_cast<std::size_t>(i)], numeric);
            if (err > result.max_rel_err) {
                result.max_rel_err = err;
                result.where = name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return result;
}

}  // namespace dld::testing
