#pragma once

// Straight-line implementation of the routing-by-agreement iteration on plain
// std::vector buffers. Deliberately independent of the tensor/ops machinery;
// used to verify route() state-for-state.

#include <cmath>
#include <vector>

namespace oracle {

struct RoutingState {
    std::vector<double> b, c, s, v;  // b is post-update, matching RoutingTrace
};

inline std::vector<RoutingState> routing_by_agreement(const std::vector<double>& uhat, int bi, int bo,
                                                      int da, int L, int alpha, double eps = 1e-9) {
    auto U = [&](int i, int j, int a, int l) {
        return uhat[static_cast<size_t>(((i * bo + j) * da + a) * L + l)];
    };
    std::vector<double> b(static_cast<size_t>(bi * bo * L), 0.0);
    std::vector<RoutingState> steps;
    for (int it = 0; it < alpha; ++it) {
        std::vector<double> c(b.size());
        for (int i = 0; i < bi; ++i)
            for (int l = 0; l < L; ++l) {
                double mx = b[static_cast<size_t>((i * bo + 0) * L + l)];
                for (int j = 1; j < bo; ++j)
                    mx = std::max(mx, b[static_cast<size_t>((i * bo + j) * L + l)]);
                double sum = 0.0;
                for (int j = 0; j < bo; ++j) {
                    double e = std::exp(b[static_cast<size_t>((i * bo + j) * L + l)] - mx);
                    c[static_cast<size_t>((i * bo + j) * L + l)] = e;
                    sum += e;
                }
                for (int j = 0; j < bo; ++j) c[static_cast<size_t>((i * bo + j) * L + l)] /= sum;
            }
        std::vector<double> s(static_cast<size_t>(bo * da * L), 0.0);
        for (int j = 0; j < bo; ++j)
            for (int a = 0; a < da; ++a)
                for (int l = 0; l < L; ++l) {
                    double acc = 0.0;
                    for (int i = 0; i < bi; ++i)
                        acc += c[static_cast<size_t>((i * bo + j) * L + l)] * U(i, j, a, l);
                    s[static_cast<size_t>((j * da + a) * L + l)] = acc;
                }
        std::vector<double> v(s.size());
        for (int j = 0; j < bo; ++j)
            for (int l = 0; l < L; ++l) {
                double q = 0.0;
                for (int a = 0; a < da; ++a) {
                    double sv = s[static_cast<size_t>((j * da + a) * L + l)];
                    q += sv * sv;
                }
                double scale = q / ((1.0 + q) * std::sqrt(q + eps));
                for (int a = 0; a < da; ++a)
                    v[static_cast<size_t>((j * da + a) * L + l)] =
                        s[static_cast<size_t>((j * da + a) * L + l)] * scale;
            }
        for (int i = 0; i < bi; ++i)
            for (int j = 0; j < bo; ++j)
                for (int l = 0; l < L; ++l) {
                    double dot = 0.0;
                    for (int a = 0; a < da; ++a)
                        dot += U(i, j, a, l) * v[static_cast<size_t>((j * da + a) * L + l)];
                    b[static_cast<size_t>((i * bo + j) * L + l)] += dot;
                }
        steps.push_back({b, c, s, v});
    }
    return steps;
}

}  // namespace oracle
