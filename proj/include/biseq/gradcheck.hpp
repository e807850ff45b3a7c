#pragma once

// Central finite differences against analytic gradients. The numeric side
// only re-runs the forward function, so it stays independent of backward().

#include <cmath>
#include <functional>
#include <span>

#include "biseq/error.hpp"
#include "biseq/tensor.hpp"

namespace biseq {

// Wiggles every coordinate of every parameter by +/- eps, recomputes the
// scalar objective, and compares the central difference with the analytic
// gradient. Returns the worst relative error, where each coordinate's error
// is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline double finite_difference_check(const std::function<double()>& f,
                                      std::span<Tensor* const> params,
                                      std::span<const Tensor> analytic,
                                      double eps = 1e-5) {
    if (!(eps > 0.0))
        throw InputError("finite_difference_check: eps must be positive");
    if (params.size() != analytic.size())
        throw DimensionError("finite_difference_check: " +
                             std::to_string(params.size()) + " parameters vs " +
                             std::to_string(analytic.size()) + " gradients");
    double worst = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p];
        const Tensor& g = analytic[p];
        if (!t.same_shape(g))
            throw DimensionError("finite_difference_check: parameter " +
                                 std::to_string(p) + " shape " + t.shape_str() +
                                 " vs gradient " + g.shape_str());
        for (std::size_t k = 0; k < t.data.size(); ++k) {
            const double saved = t.data[k];
            t.data[k] = saved + eps;
            const double fp = f();
            t.data[k] = saved - eps;
            const double fm = f();
            t.data[k] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("finite_difference_check: non-finite objective");
            const double num = (fp - fm) / (2.0 * eps);
            const double ana = g.data[k];
            const double denom = std::max({std::fabs(ana), std::fabs(num), 1e-8});
            worst = std::max(worst, std::fabs(ana - num) / denom);
        }
    }
    return worst;
}

} // namespace biseq
