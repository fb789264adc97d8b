#pragma once

#include <cstdint>
#include <vector>

#include "cvgan/ops.hpp"

namespace cvgan {

// Central-difference verification of the tape gradient for a scalar-valued
// function f. Runs in 64-bit; returns the max relative error over the first
// `max_coords` coordinates (all by default). Relative error uses
// |g - fd| / max(1e-6, |g|, |fd|) so near-zero gradients are compared on an
// absolute scale.
template <typename F>
double finite_diff_check(const F& f, const TensorT<double>& x0, double eps = 1e-5,
                         size_t max_coords = static_cast<size_t>(-1)) {
    TensorT<double> x = x0.clone();
    x.set_requires_grad(true);
    std::vector<double> analytic(x.size(), 0.0);
    {
        TapeT<double> tape;
        TapeScope<double> scope(tape);
        TensorT<double> y = f(x);
        if (y.size() != 1) throw ContractError("finite_diff_check: f must be scalar-valued");
        tape.backward(y);
        if (const auto* g = tape.grad(x)) analytic = *g;
    }
    size_t n = std::min(x.size(), max_coords);
    double max_err = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double save = x[i];
        x[i] = save + eps;
        double fp = f(x).item();
        x[i] = save - eps;
        double fm = f(x).item();
        x[i] = save;
        double fd = (fp - fm) / (2.0 * eps);
        double g = analytic[i];
        double denom = std::max({1e-6, std::abs(g), std::abs(fd)});
        max_err = std::max(max_err, std::abs(g - fd) / denom);
    }
    return max_err;
}

}  // namespace cvgan
