#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cvgan/common.hpp"
#include "cvgan/tape.hpp"
#include "cvgan/tensor.hpp"

// Differentiable tensor operations. Every op computes its output eagerly and,
// when a tape is active and an input is tracked, records a backward closure.
// Accumulation into any output/gradient element follows a fixed serial order,
// which makes results independent of the worker-thread count.

namespace cvgan {

namespace detail {

template <typename T>
inline void check_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// C[m,n] = op(A) * op(B); row-major, C overwritten. Each C element is
// accumulated serially over k, so the result does not depend on how rows are
// split across threads.
template <typename T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const T* a, const T* b, T* c) {
    const size_t total = static_cast<size_t>(m) * n;
    std::fill(c, c + total, T(0));
    const bool par = static_cast<size_t>(m) * n * k > 65536 && worker_threads() > 1;
#pragma omp parallel for schedule(static) num_threads(worker_threads()) if (par)
    for (int i = 0; i < m; ++i) {
        T* ci = c + static_cast<size_t>(i) * n;
        if (!trans_a && !trans_b) {
            const T* ai = a + static_cast<size_t>(i) * k;
            for (int kk = 0; kk < k; ++kk) {
                T av = ai[kk];
                const T* bk = b + static_cast<size_t>(kk) * n;
                for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
            }
        } else if (!trans_a && trans_b) {
            const T* ai = a + static_cast<size_t>(i) * k;
            for (int j = 0; j < n; ++j) {
                const T* bj = b + static_cast<size_t>(j) * k;
                T acc = T(0);
                for (int kk = 0; kk < k; ++kk) acc += ai[kk] * bj[kk];
                ci[j] = acc;
            }
        } else if (trans_a && !trans_b) {
            for (int kk = 0; kk < k; ++kk) {
                T av = a[static_cast<size_t>(kk) * m + i];
                const T* bk = b + static_cast<size_t>(kk) * n;
                for (int j = 0; j < n; ++j) ci[j] += av * bk[j];
            }
        } else {
            for (int j = 0; j < n; ++j) {
                T acc = T(0);
                for (int kk = 0; kk < k; ++kk)
                    acc += a[static_cast<size_t>(kk) * m + i] * b[static_cast<size_t>(j) * k + kk];
                ci[j] = acc;
            }
        }
    }
}

template <typename T>
inline T sigmoid_stable(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    T e = std::exp(x);
    return e / (T(1) + e);
}

struct AxisSplit {
    size_t outer, d, inner;
};

inline AxisSplit split_axis(const Shape& s, int axis) {
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ContractError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisSplit sp{1, static_cast<size_t>(s[static_cast<size_t>(axis)]), 1};
    for (int i = 0; i < axis; ++i) sp.outer *= static_cast<size_t>(s[static_cast<size_t>(i)]);
    for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= static_cast<size_t>(s[i]);
    return sp;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "add");
    TensorT<T> out(a.shape());
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
    if (auto* tp = TapeT<T>::active(); tp && (tp->tracks(a) || tp->tracks(b))) {
        int64_t ia = tp->id_of(a), ib = tp->id_of(b);
        out.set_node(tp->record(out.size(), [ia, ib](TapeT<T>& t, const std::vector<T>& g) {
            if (ia >= 0) {
                auto& ga = t.grad_buf(ia);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (ib >= 0) {
                auto& gb = t.grad_buf(ib);
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        }));
    }
    return out;
}

template <typename T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "sub");
    TensorT<T> out(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    if (auto* tp = TapeT<T>::active(); tp && (tp->tracks(a) || tp->tracks(b))) {
        int64_t ia = tp->id_of(a), ib = tp->id_of(b);
        out.set_node(tp->record(out.size(), [ia, ib](TapeT<T>& t, const std::vector<T>& g) {
            if (ia >= 0) {
                auto& ga = t.grad_buf(ia);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (ib >= 0) {
                auto& gb = t.grad_buf(ib);
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        }));
    }
    return out;
}

template <typename T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_same_shape(a, b, "mul");
    TensorT<T> out(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    if (auto* tp = TapeT<T>::active(); tp && (tp->tracks(a) || tp->tracks(b))) {
        int64_t ia = tp->id_of(a), ib = tp->id_of(b);
        out.set_node(tp->record(out.size(), [ia, ib, a, b](TapeT<T>& t, const std::vector<T>& g) {
            if (ia >= 0) {
                auto& ga = t.grad_buf(ia);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
            }
            if (ib >= 0) {
                auto& gb = t.grad_buf(ib);
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
            }
        }));
    }
    return out;
}

template <typename T>
TensorT<T> mul_scalar(const TensorT<T>& a, T s) {
    TensorT<T> out(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(a)) {
        int64_t ia = tp->id_of(a);
        out.set_node(tp->record(out.size(), [ia, s](TapeT<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(ia);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
        }));
    }
    return out;
}

template <typename T>
TensorT<T> add_scalar(const TensorT<T>& a, T s) {
    TensorT<T> out(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(a)) {
        int64_t ia = tp->id_of(a);
        out.set_node(tp->record(out.size(), [ia](TapeT<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(ia);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// unary nonlinearities
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> abs_t(const TensorT<T>& a) {
    TensorT<T> out(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a[i]);
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(a)) {
        int64_t ia = tp->id_of(a);
        // subgradient 0 at the kink
        out.set_node(tp->record(out.size(), [ia, a](TapeT<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(ia);
            for (size_t i = 0; i < g.size(); ++i)
                ga[i] += g[i] * (a[i] > T(0) ? T(1) : (a[i] < T(0) ? T(-1) : T(0)));
        }));
    }
    return out;
}

// x^n for integer n >= 1
template <typename T>
TensorT<T> powi(const TensorT<T>& a, int n) {
    if (n < 1) throw ContractError("powi: exponent must be >= 1");
    TensorT<T> out(a.shape());
    for (size_t i = 0; i < out.size(); ++i) {
        T v = a[i], r = v;
        for (int e = 1; e < n; ++e) r *= v;
        out[i] = r;
    }
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(a)) {
        int64_t ia = tp->id_of(a);
        out.set_node(tp->record(out.size(), [ia, a, n](TapeT<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(ia);
            for (size_t i = 0; i < g.size(); ++i) {
                T v = a[i], r = T(1);
                for (int e = 1; e < n; ++e) r *= v;
                ga[i] += g[i] * T(n) * r;
            }
        }));
    }
    return out;
}

template <typename T>
TensorT<T> swish(const TensorT<T>& a) {
    TensorT<T> out(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] * detail::sigmoid_stable(a[i]);
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(a)) {
        int64_t ia = tp->id_of(a);
        out.set_node(tp->record(out.size(), [ia, a](TapeT<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(ia);
            for (size_t i = 0; i < g.size(); ++i) {
                T s = detail::sigmoid_stable(a[i]);
                ga[i] += g[i] * s * (T(1) + a[i] * (T(1) - s));
            }
        }));
    }
    return out;
}

template <typename T>
TensorT<T> leaky_relu(const TensorT<T>& a, T slope) {
    TensorT<T> out(a.shape());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a[i] > T(0) ? a[i] : slope * a[i];
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(a)) {
        int64_t ia = tp->id_of(a);
        out.set_node(tp->record(out.size(), [ia, a, slope](TapeT<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(ia);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (a[i] > T(0) ? T(1) : slope);
        }));
    }
    return out;
}

// log(1 + e^x), evaluated stably; finite for |x| up to the float range.
template <typename T>
TensorT<T> softplus(const TensorT<T>& a) {
    TensorT<T> out(a.shape());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = std::max(a[i], T(0)) + std::log1p(std::exp(-std::abs(a[i])));
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(a)) {
        int64_t ia = tp->id_of(a);
        out.set_node(tp->record(out.size(), [ia, a](TapeT<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(ia);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * detail::sigmoid_stable(a[i]);
        }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// reductions / shape
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> sum_all(const TensorT<T>& a) {
    T acc = T(0);
    for (size_t i = 0; i < a.size(); ++i) acc += a[i];
    TensorT<T> out = TensorT<T>::scalar(acc);
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(a)) {
        int64_t ia = tp->id_of(a);
        size_t n = a.size();
        out.set_node(tp->record(1, [ia, n](TapeT<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(ia);
            for (size_t i = 0; i < n; ++i) ga[i] += g[0];
        }));
    }
    return out;
}

template <typename T>
TensorT<T> mean_all(const TensorT<T>& a) {
    return mul_scalar(sum_all(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
TensorT<T> reshape(const TensorT<T>& a, Shape s) {
    check_shape_valid(s);
    if (shape_numel(s) != a.size())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(s) + " changes element count");
    TensorT<T> out = TensorT<T>::from(std::move(s), a.vec());
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(a)) {
        int64_t ia = tp->id_of(a);
        out.set_node(tp->record(out.size(), [ia](TapeT<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(ia);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }));
    }
    return out;
}

template <typename T>
TensorT<T> TensorT<T>::reshaped(Shape s) const {
    return reshape(*this, std::move(s));
}

// [n tensors of shape S] -> [n, S...]
template <typename T>
TensorT<T> stack0(const std::vector<TensorT<T>>& parts) {
    if (parts.empty()) throw ContractError("stack0: empty input");
    for (const auto& p : parts) detail::check_same_shape(parts[0], p, "stack0");
    Shape s;
    s.push_back(static_cast<int>(parts.size()));
    for (int e : parts[0].shape()) s.push_back(e);
    TensorT<T> out(s);
    size_t piece = parts[0].size();
    for (size_t i = 0; i < parts.size(); ++i)
        std::copy(parts[i].data(), parts[i].data() + piece, out.data() + i * piece);
    auto* tp = TapeT<T>::active();
    if (!tp) return out;
    bool any = false;
    for (const auto& p : parts) any = any || tp->tracks(p);
    if (!any) return out;
    std::vector<int64_t> ids(parts.size());
    for (size_t i = 0; i < parts.size(); ++i) ids[i] = tp->id_of(parts[i]);
    out.set_node(tp->record(out.size(), [ids, piece](TapeT<T>& t, const std::vector<T>& g) {
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0) continue;
            auto& gp = t.grad_buf(ids[i]);
            const T* gs = g.data() + i * piece;
            for (size_t j = 0; j < piece; ++j) gp[j] += gs[j];
        }
    }));
    return out;
}

// ---------------------------------------------------------------------------
// softmax / norms / squash along an axis
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax(const TensorT<T>& a, int axis) {
    auto sp = detail::split_axis(a.shape(), axis);
    TensorT<T> out(a.shape());
    const T* px = a.data();
    T* py = out.data();
    for (size_t o = 0; o < sp.outer; ++o) {
        for (size_t in = 0; in < sp.inner; ++in) {
            size_t base = o * sp.d * sp.inner + in;
            T mx = px[base];
            for (size_t k = 1; k < sp.d; ++k) mx = std::max(mx, px[base + k * sp.inner]);
            T sum = T(0);
            for (size_t k = 0; k < sp.d; ++k) {
                T e = std::exp(px[base + k * sp.inner] - mx);
                py[base + k * sp.inner] = e;
                sum += e;
            }
            T inv = T(1) / sum;
            for (size_t k = 0; k < sp.d; ++k) py[base + k * sp.inner] *= inv;
        }
    }
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(a)) {
        int64_t ia = tp->id_of(a);
        out.set_node(tp->record(out.size(), [ia, out, sp](TapeT<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(ia);
            const T* y = out.data();
            for (size_t o = 0; o < sp.outer; ++o) {
                for (size_t in = 0; in < sp.inner; ++in) {
                    size_t base = o * sp.d * sp.inner + in;
                    T dot = T(0);
                    for (size_t k = 0; k < sp.d; ++k) dot += g[base + k * sp.inner] * y[base + k * sp.inner];
                    for (size_t k = 0; k < sp.d; ++k) {
                        size_t ix = base + k * sp.inner;
                        ga[ix] += y[ix] * (g[ix] - dot);
                    }
                }
            }
        }));
    }
    return out;
}

// L1 or L2 norm along an axis; the axis is removed from the shape.
// Gradient at an exactly-zero vector is defined as 0 for both norms.
template <typename T>
TensorT<T> reduce_norm(const TensorT<T>& a, int axis, int p) {
    if (p != 1 && p != 2) throw ContractError("reduce_norm: p must be 1 or 2");
    auto sp = detail::split_axis(a.shape(), axis);
    Shape os = a.shape();
    os.erase(os.begin() + axis);
    if (os.empty()) os.push_back(1);
    TensorT<T> out(os);
    const T* px = a.data();
    for (size_t o = 0; o < sp.outer; ++o) {
        for (size_t in = 0; in < sp.inner; ++in) {
            size_t base = o * sp.d * sp.inner + in;
            T acc = T(0);
            if (p == 1) {
                for (size_t k = 0; k < sp.d; ++k) acc += std::abs(px[base + k * sp.inner]);
            } else {
                for (size_t k = 0; k < sp.d; ++k) {
                    T v = px[base + k * sp.inner];
                    acc += v * v;
                }
                acc = std::sqrt(acc);
            }
            out[o * sp.inner + in] = acc;
        }
    }
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(a)) {
        int64_t ia = tp->id_of(a);
        out.set_node(tp->record(out.size(), [ia, a, out, sp, p](TapeT<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(ia);
            const T* x = a.data();
            for (size_t o = 0; o < sp.outer; ++o) {
                for (size_t in = 0; in < sp.inner; ++in) {
                    size_t base = o * sp.d * sp.inner + in;
                    T go = g[o * sp.inner + in];
                    if (p == 1) {
                        for (size_t k = 0; k < sp.d; ++k) {
                            size_t ix = base + k * sp.inner;
                            T s = x[ix] > T(0) ? T(1) : (x[ix] < T(0) ? T(-1) : T(0));
                            ga[ix] += go * s;
                        }
                    } else {
                        T nrm = out[o * sp.inner + in];
                        if (nrm == T(0)) continue;
                        for (size_t k = 0; k < sp.d; ++k) {
                            size_t ix = base + k * sp.inner;
                            ga[ix] += go * x[ix] / nrm;
                        }
                    }
                }
            }
        }));
    }
    return out;
}

// v = (|s|^2 / (1+|s|^2)) * s / sqrt(|s|^2 + eps), per vector along `axis`.
// The eps term regularizes the s=0 singularity: squash(0) = 0 with zero
// gradient, and |v| stays strictly below 1 and monotone in |s|.
template <typename T>
TensorT<T> squash(const TensorT<T>& a, int axis, T eps = T(1e-9)) {
    auto sp = detail::split_axis(a.shape(), axis);
    TensorT<T> out(a.shape());
    const T* px = a.data();
    for (size_t o = 0; o < sp.outer; ++o) {
        for (size_t in = 0; in < sp.inner; ++in) {
            size_t base = o * sp.d * sp.inner + in;
            T q = T(0);
            for (size_t k = 0; k < sp.d; ++k) {
                T v = px[base + k * sp.inner];
                q += v * v;
            }
            T scale = q / ((T(1) + q) * std::sqrt(q + eps));
            for (size_t k = 0; k < sp.d; ++k) out[base + k * sp.inner] = px[base + k * sp.inner] * scale;
        }
    }
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(a)) {
        int64_t ia = tp->id_of(a);
        out.set_node(tp->record(out.size(), [ia, a, sp, eps](TapeT<T>& t, const std::vector<T>& g) {
            auto& ga = t.grad_buf(ia);
            const T* x = a.data();
            for (size_t o = 0; o < sp.outer; ++o) {
                for (size_t in = 0; in < sp.inner; ++in) {
                    size_t base = o * sp.d * sp.inner + in;
                    T q = T(0), gdots = T(0);
                    for (size_t k = 0; k < sp.d; ++k) {
                        size_t ix = base + k * sp.inner;
                        q += x[ix] * x[ix];
                        gdots += g[ix] * x[ix];
                    }
                    T rq = std::sqrt(q + eps);
                    T scale = q / ((T(1) + q) * rq);
                    // d(scale)/dq
                    T dscale = T(1) / ((T(1) + q) * (T(1) + q) * rq) -
                               q / (T(2) * (T(1) + q) * (q + eps) * rq);
                    for (size_t k = 0; k < sp.d; ++k) {
                        size_t ix = base + k * sp.inner;
                        ga[ix] += g[ix] * scale + T(2) * x[ix] * dscale * gdots;
                    }
                }
            }
        }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

// out[m,n] = op(a) * op(b); a is [m,k] (or [k,m] when trans_a), b is [k,n]
// (or [n,k] when trans_b).
template <typename T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b, bool trans_a = false, bool trans_b = false) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: rank-2 tensors required");
    int m = trans_a ? a.dim(1) : a.dim(0);
    int ka = trans_a ? a.dim(0) : a.dim(1);
    int kb = trans_b ? b.dim(1) : b.dim(0);
    int n = trans_b ? b.dim(0) : b.dim(1);
    if (ka != kb)
        throw ShapeError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    TensorT<T> out({m, n});
    detail::gemm(trans_a, trans_b, m, n, ka, a.data(), b.data(), out.data());
    if (auto* tp = TapeT<T>::active(); tp && (tp->tracks(a) || tp->tracks(b))) {
        int64_t ia = tp->id_of(a), ib = tp->id_of(b);
        out.set_node(tp->record(out.size(), [=](TapeT<T>& t, const std::vector<T>& g) {
            if (ia >= 0) {
                auto& ga = t.grad_buf(ia);
                std::vector<T> tmp(ga.size());
                if (!trans_a && !trans_b) {
                    detail::gemm(false, true, m, ka, n, g.data(), b.data(), tmp.data());  // g * b^T
                } else if (!trans_a && trans_b) {
                    detail::gemm(false, false, m, ka, n, g.data(), b.data(), tmp.data());  // g * b
                } else if (trans_a && !trans_b) {
                    detail::gemm(false, true, ka, m, n, b.data(), g.data(), tmp.data());  // b * g^T
                } else {
                    detail::gemm(true, true, ka, m, n, b.data(), g.data(), tmp.data());
                }
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += tmp[i];
            }
            if (ib >= 0) {
                auto& gb = t.grad_buf(ib);
                std::vector<T> tmp(gb.size());
                if (!trans_a && !trans_b) {
                    detail::gemm(true, false, ka, n, m, a.data(), g.data(), tmp.data());  // a^T * g
                } else if (!trans_a && trans_b) {
                    detail::gemm(true, false, n, ka, m, g.data(), a.data(), tmp.data());  // g^T * a
                } else if (trans_a && !trans_b) {
                    detail::gemm(false, false, ka, n, m, a.data(), g.data(), tmp.data());  // a * g
                } else {
                    detail::gemm(true, true, n, ka, m, g.data(), a.data(), tmp.data());
                }
                for (size_t i = 0; i < gb.size(); ++i) gb[i] += tmp[i];
            }
        }));
    }
    return out;
}

// x[C, ...] + b[C], broadcast over trailing dims.
template <typename T>
TensorT<T> add_channel_bias(const TensorT<T>& x, const TensorT<T>& b) {
    if (x.rank() < 1 || b.rank() != 1 || x.dim(0) != b.dim(0))
        throw ShapeError("add_channel_bias: " + shape_str(x.shape()) + " vs " + shape_str(b.shape()));
    size_t c = static_cast<size_t>(x.dim(0));
    size_t rest = x.size() / c;
    TensorT<T> out(x.shape());
    for (size_t ch = 0; ch < c; ++ch) {
        T bv = b[ch];
        const T* px = x.data() + ch * rest;
        T* po = out.data() + ch * rest;
        for (size_t i = 0; i < rest; ++i) po[i] = px[i] + bv;
    }
    if (auto* tp = TapeT<T>::active(); tp && (tp->tracks(x) || tp->tracks(b))) {
        int64_t ix = tp->id_of(x), ib = tp->id_of(b);
        out.set_node(tp->record(out.size(), [ix, ib, c, rest](TapeT<T>& t, const std::vector<T>& g) {
            if (ix >= 0) {
                auto& gx = t.grad_buf(ix);
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (ib >= 0) {
                auto& gb = t.grad_buf(ib);
                for (size_t ch = 0; ch < c; ++ch) {
                    T acc = T(0);
                    const T* pg = g.data() + ch * rest;
                    for (size_t i = 0; i < rest; ++i) acc += pg[i];
                    gb[ch] += acc;
                }
            }
        }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace detail {

inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// col[(ci*k+ky)*k+kx][y*wo+x] = x_pad[ci][y*s+ky][x*s+kx]
template <typename T>
void im2col(const T* x, int ci, int h, int w, int k, int stride, int pad, int ho, int wo, T* col) {
    int cols = ho * wo;
    for (int c = 0; c < ci; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                T* dst = col + ((static_cast<size_t>(c) * k + ky) * k + kx) * cols;
                for (int y = 0; y < ho; ++y) {
                    int sy = y * stride + ky - pad;
                    if (sy < 0 || sy >= h) {
                        for (int xx = 0; xx < wo; ++xx) dst[y * wo + xx] = T(0);
                        continue;
                    }
                    const T* row = x + (static_cast<size_t>(c) * h + sy) * w;
                    for (int xx = 0; xx < wo; ++xx) {
                        int sx = xx * stride + kx - pad;
                        dst[y * wo + xx] = (sx >= 0 && sx < w) ? row[sx] : T(0);
                    }
                }
            }
        }
    }
}

// adjoint of im2col: scatter-add columns back into the image
template <typename T>
void col2im(const T* col, int ci, int h, int w, int k, int stride, int pad, int ho, int wo, T* img) {
    std::fill(img, img + static_cast<size_t>(ci) * h * w, T(0));
    int cols = ho * wo;
    for (int c = 0; c < ci; ++c) {
        for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
                const T* src = col + ((static_cast<size_t>(c) * k + ky) * k + kx) * cols;
                for (int y = 0; y < ho; ++y) {
                    int sy = y * stride + ky - pad;
                    if (sy < 0 || sy >= h) continue;
                    T* row = img + (static_cast<size_t>(c) * h + sy) * w;
                    for (int xx = 0; xx < wo; ++xx) {
                        int sx = xx * stride + kx - pad;
                        if (sx >= 0 && sx < w) row[sx] += src[y * wo + xx];
                    }
                }
            }
        }
    }
}

struct ConvGeom {
    int ci, h, w, k, stride, pad, ho, wo;
};

template <typename T>
void check_conv_args(const TensorT<T>& x, const TensorT<T>& wt, int stride, int pad, const char* op) {
    if (x.rank() != 3 || wt.rank() != 4) throw ShapeError(std::string(op) + ": need x[C,H,W], w[A,B,k,k]");
    if (wt.dim(2) != wt.dim(3)) throw ShapeError(std::string(op) + ": kernel must be square");
    if (stride < 1) throw ContractError(std::string(op) + ": stride must be >= 1");
    if (pad < 0) throw ContractError(std::string(op) + ": pad must be >= 0");
}

}  // namespace detail

// x[Cin,H,W] (*) w[Cout,Cin,k,k] -> [Cout,H',W'], H' = (H+2p-k)/s + 1.
template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, int stride = 1, int pad = 0) {
    detail::check_conv_args(x, w, stride, pad, "conv2d");
    if (x.dim(0) != w.dim(1))
        throw ShapeError("conv2d: input channels " + std::to_string(x.dim(0)) + " vs weight " +
                         std::to_string(w.dim(1)));
    const int ci = x.dim(0), h = x.dim(1), ww = x.dim(2);
    const int co = w.dim(0), k = w.dim(2);
    if (k > h + 2 * pad || k > ww + 2 * pad) throw ShapeError("conv2d: kernel larger than padded input");
    const int ho = detail::conv_out_extent(h, k, stride, pad);
    const int wo = detail::conv_out_extent(ww, k, stride, pad);
    TensorT<T> out({co, ho, wo});
    const int ckk = ci * k * k, cols = ho * wo;
    std::vector<T> col(static_cast<size_t>(ckk) * cols);
    detail::im2col(x.data(), ci, h, ww, k, stride, pad, ho, wo, col.data());
    detail::gemm(false, false, co, cols, ckk, w.data(), col.data(), out.data());
    if (auto* tp = TapeT<T>::active(); tp && (tp->tracks(x) || tp->tracks(w))) {
        int64_t ix = tp->id_of(x), iw = tp->id_of(w);
        out.set_node(tp->record(out.size(), [=](TapeT<T>& t, const std::vector<T>& g) {
            if (ix >= 0) {
                auto& gx = t.grad_buf(ix);
                std::vector<T> gcol(static_cast<size_t>(ckk) * cols);
                detail::gemm(true, false, ckk, cols, co, w.data(), g.data(), gcol.data());
                std::vector<T> gimg(gx.size());
                detail::col2im(gcol.data(), ci, h, ww, k, stride, pad, ho, wo, gimg.data());
                for (size_t i = 0; i < gx.size(); ++i) gx[i] += gimg[i];
            }
            if (iw >= 0) {
                auto& gw = t.grad_buf(iw);
                std::vector<T> colb(static_cast<size_t>(ckk) * cols);
                detail::im2col(x.data(), ci, h, ww, k, stride, pad, ho, wo, colb.data());
                std::vector<T> tmp(gw.size());
                detail::gemm(false, true, co, ckk, cols, g.data(), colb.data(), tmp.data());
                for (size_t i = 0; i < gw.size(); ++i) gw[i] += tmp[i];
            }
        }));
    }
    return out;
}

// Transposed convolution: the exact adjoint of conv2d in its data argument.
// x[C0,Hi,Wi] (*) w[C0,C1,k,k] -> [C1,H,W]. By default H = (Hi-1)*s + k - 2p;
// for stride > 1 several input extents share the same conv output extent, so
// out_h/out_w pin the intended one.
template <typename T>
TensorT<T> conv_transpose2d(const TensorT<T>& x, const TensorT<T>& w, int stride = 1, int pad = 0,
                            int out_h = -1, int out_w = -1) {
    detail::check_conv_args(x, w, stride, pad, "conv_transpose2d");
    if (x.dim(0) != w.dim(0))
        throw ShapeError("conv_transpose2d: input channels " + std::to_string(x.dim(0)) +
                         " vs weight " + std::to_string(w.dim(0)));
    const int c0 = x.dim(0), hi = x.dim(1), wi = x.dim(2);
    const int c1 = w.dim(1), k = w.dim(2);
    const int h = out_h > 0 ? out_h : (hi - 1) * stride + k - 2 * pad;
    const int ww = out_w > 0 ? out_w : (wi - 1) * stride + k - 2 * pad;
    if (h < 1 || ww < 1) throw ShapeError("conv_transpose2d: empty output for given kernel/stride/pad");
    if (detail::conv_out_extent(h, k, stride, pad) != hi ||
        detail::conv_out_extent(ww, k, stride, pad) != wi)
        throw ShapeError("conv_transpose2d: output extent inconsistent with kernel/stride/pad");
    const int ckk = c1 * k * k, cols = hi * wi;
    TensorT<T> out({c1, h, ww});
    std::vector<T> gcol(static_cast<size_t>(ckk) * cols);
    detail::gemm(true, false, ckk, cols, c0, w.data(), x.data(), gcol.data());
    detail::col2im(gcol.data(), c1, h, ww, k, stride, pad, hi, wi, out.data());
    if (auto* tp = TapeT<T>::active(); tp && (tp->tracks(x) || tp->tracks(w))) {
        int64_t ix = tp->id_of(x), iw = tp->id_of(w);
        out.set_node(tp->record(out.size(), [=](TapeT<T>& t, const std::vector<T>& g) {
            std::vector<T> colg(static_cast<size_t>(ckk) * cols);
            detail::im2col(g.data(), c1, h, ww, k, stride, pad, hi, wi, colg.data());
            if (ix >= 0) {
                auto& gx = t.grad_buf(ix);
                std::vector<T> tmp(gx.size());
                detail::gemm(false, false, c0, cols, ckk, w.data(), colg.data(), tmp.data());
                for (size_t i = 0; i < gx.size(); ++i) gx[i] += tmp[i];
            }
            if (iw >= 0) {
                auto& gw = t.grad_buf(iw);
                std::vector<T> tmp(gw.size());
                detail::gemm(false, true, c0, ckk, cols, x.data(), colg.data(), tmp.data());
                for (size_t i = 0; i < gw.size(); ++i) gw[i] += tmp[i];
            }
        }));
    }
    return out;
}

// Nearest-neighbor 2x upsample of [C,H,W].
template <typename T>
TensorT<T> upsample_nearest2(const TensorT<T>& x) {
    if (x.rank() != 3) throw ShapeError("upsample_nearest2: need [C,H,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    TensorT<T> out({c, 2 * h, 2 * w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y) {
            const T* src = x.data() + (static_cast<size_t>(ch) * h + y / 2) * w;
            T* dst = out.data() + (static_cast<size_t>(ch) * 2 * h + y) * 2 * w;
            for (int xx = 0; xx < 2 * w; ++xx) dst[xx] = src[xx / 2];
        }
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(x)) {
        int64_t ix = tp->id_of(x);
        out.set_node(tp->record(out.size(), [ix, c, h, w](TapeT<T>& t, const std::vector<T>& g) {
            auto& gx = t.grad_buf(ix);
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        T acc = T(0);
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                acc += g[(static_cast<size_t>(ch) * 2 * h + 2 * y + dy) * 2 * w + 2 * xx + dx];
                        gx[(static_cast<size_t>(ch) * h + y) * w + xx] += acc;
                    }
        }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// neighbor differences (for the gradient-difference loss)
// ---------------------------------------------------------------------------

// out[c,y,x] = in[c,y,x+1] - in[c,y,x]; width shrinks by one.
template <typename T>
TensorT<T> diff_h(const TensorT<T>& x) {
    if (x.rank() != 3 || x.dim(2) < 2) throw ShapeError("diff_h: need [C,H,W>=2]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    TensorT<T> out({c, h, w - 1});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < h; ++y) {
            const T* row = x.data() + (static_cast<size_t>(ch) * h + y) * w;
            T* ro = out.data() + (static_cast<size_t>(ch) * h + y) * (w - 1);
            for (int xx = 0; xx + 1 < w; ++xx) ro[xx] = row[xx + 1] - row[xx];
        }
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(x)) {
        int64_t ix = tp->id_of(x);
        out.set_node(tp->record(out.size(), [ix, c, h, w](TapeT<T>& t, const std::vector<T>& g) {
            auto& gx = t.grad_buf(ix);
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y < h; ++y)
                    for (int xx = 0; xx + 1 < w; ++xx) {
                        T gv = g[(static_cast<size_t>(ch) * h + y) * (w - 1) + xx];
                        gx[(static_cast<size_t>(ch) * h + y) * w + xx + 1] += gv;
                        gx[(static_cast<size_t>(ch) * h + y) * w + xx] -= gv;
                    }
        }));
    }
    return out;
}

// out[c,y,x] = in[c,y+1,x] - in[c,y,x]; height shrinks by one.
template <typename T>
TensorT<T> diff_v(const TensorT<T>& x) {
    if (x.rank() != 3 || x.dim(1) < 2) throw ShapeError("diff_v: need [C,H>=2,W]");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    TensorT<T> out({c, h - 1, w});
    for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y + 1 < h; ++y)
            for (int xx = 0; xx < w; ++xx)
                out[(static_cast<size_t>(ch) * (h - 1) + y) * w + xx] =
                    x[(static_cast<size_t>(ch) * h + y + 1) * w + xx] -
                    x[(static_cast<size_t>(ch) * h + y) * w + xx];
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(x)) {
        int64_t ix = tp->id_of(x);
        out.set_node(tp->record(out.size(), [ix, c, h, w](TapeT<T>& t, const std::vector<T>& g) {
            auto& gx = t.grad_buf(ix);
            for (int ch = 0; ch < c; ++ch)
                for (int y = 0; y + 1 < h; ++y)
                    for (int xx = 0; xx < w; ++xx) {
                        T gv = g[(static_cast<size_t>(ch) * (h - 1) + y) * w + xx];
                        gx[(static_cast<size_t>(ch) * h + y + 1) * w + xx] += gv;
                        gx[(static_cast<size_t>(ch) * h + y) * w + xx] -= gv;
                    }
        }));
    }
    return out;
}

// ---------------------------------------------------------------------------
// capsule einsums
// ---------------------------------------------------------------------------

// u[bi,du,L] x w[bi,bo,du,da] -> uhat[bi,bo,da,L]
template <typename T>
TensorT<T> capsule_predict(const TensorT<T>& u, const TensorT<T>& w) {
    if (u.rank() != 3 || w.rank() != 4) throw ShapeError("capsule_predict: need u[bi,du,L], w[bi,bo,du,da]");
    const int bi = u.dim(0), du = u.dim(1), L = u.dim(2);
    const int bo = w.dim(1), da = w.dim(3);
    if (w.dim(0) != bi || w.dim(2) != du)
        throw ShapeError("capsule_predict: digit width mismatch " + shape_str(u.shape()) + " vs " +
                         shape_str(w.shape()));
    TensorT<T> out({bi, bo, da, L});
    for (int i = 0; i < bi; ++i) {
        const T* ui = u.data() + static_cast<size_t>(i) * du * L;
        for (int j = 0; j < bo; ++j) {
            const T* wij = w.data() + (static_cast<size_t>(i) * bo + j) * du * da;  // [du,da]
            T* oij = out.data() + (static_cast<size_t>(i) * bo + j) * da * L;       // [da,L]
            detail::gemm(true, false, da, L, du, wij, ui, oij);                     // w^T * u_i
        }
    }
    if (auto* tp = TapeT<T>::active(); tp && (tp->tracks(u) || tp->tracks(w))) {
        int64_t iu = tp->id_of(u), iw = tp->id_of(w);
        out.set_node(tp->record(out.size(), [=](TapeT<T>& t, const std::vector<T>& g) {
            if (iu >= 0) {
                auto& gu = t.grad_buf(iu);
                std::vector<T> tmp(static_cast<size_t>(du) * L);
                for (int i = 0; i < bi; ++i) {
                    T* gui = gu.data() + static_cast<size_t>(i) * du * L;
                    for (int j = 0; j < bo; ++j) {
                        const T* wij = w.data() + (static_cast<size_t>(i) * bo + j) * du * da;
                        const T* gij = g.data() + (static_cast<size_t>(i) * bo + j) * da * L;
                        detail::gemm(false, false, du, L, da, wij, gij, tmp.data());  // w * g
                        for (size_t q = 0; q < tmp.size(); ++q) gui[q] += tmp[q];
                    }
                }
            }
            if (iw >= 0) {
                auto& gw = t.grad_buf(iw);
                std::vector<T> tmp(static_cast<size_t>(du) * da);
                for (int i = 0; i < bi; ++i) {
                    const T* ui = u.data() + static_cast<size_t>(i) * du * L;
                    for (int j = 0; j < bo; ++j) {
                        const T* gij = g.data() + (static_cast<size_t>(i) * bo + j) * da * L;
                        T* gwij = gw.data() + (static_cast<size_t>(i) * bo + j) * du * da;
                        detail::gemm(false, true, du, da, L, ui, gij, tmp.data());  // u_i * g^T
                        for (size_t q = 0; q < tmp.size(); ++q) gwij[q] += tmp[q];
                    }
                }
            }
        }));
    }
    return out;
}

// c[bi,bo,L] x uhat[bi,bo,da,L] -> s[bo,da,L]; s_j = sum_i c_ij * uhat_ij
template <typename T>
TensorT<T> coupled_sum(const TensorT<T>& c, const TensorT<T>& uhat) {
    if (c.rank() != 3 || uhat.rank() != 4) throw ShapeError("coupled_sum: need c[bi,bo,L], uhat[bi,bo,da,L]");
    const int bi = c.dim(0), bo = c.dim(1), L = c.dim(2), da = uhat.dim(2);
    if (uhat.dim(0) != bi || uhat.dim(1) != bo || uhat.dim(3) != L)
        throw ShapeError("coupled_sum: shape mismatch " + shape_str(c.shape()) + " vs " +
                         shape_str(uhat.shape()));
    TensorT<T> out({bo, da, L});
    for (int j = 0; j < bo; ++j)
        for (int i = 0; i < bi; ++i) {
            const T* cij = c.data() + (static_cast<size_t>(i) * bo + j) * L;
            const T* uij = uhat.data() + (static_cast<size_t>(i) * bo + j) * da * L;
            T* sj = out.data() + static_cast<size_t>(j) * da * L;
            for (int a = 0; a < da; ++a)
                for (int l = 0; l < L; ++l) sj[a * L + l] += cij[l] * uij[a * L + l];
        }
    if (auto* tp = TapeT<T>::active(); tp && (tp->tracks(c) || tp->tracks(uhat))) {
        int64_t ic = tp->id_of(c), iu = tp->id_of(uhat);
        out.set_node(tp->record(out.size(), [=](TapeT<T>& t, const std::vector<T>& g) {
            if (ic >= 0) {
                auto& gc = t.grad_buf(ic);
                for (int i = 0; i < bi; ++i)
                    for (int j = 0; j < bo; ++j) {
                        const T* uij = uhat.data() + (static_cast<size_t>(i) * bo + j) * da * L;
                        const T* gj = g.data() + static_cast<size_t>(j) * da * L;
                        T* gcij = gc.data() + (static_cast<size_t>(i) * bo + j) * L;
                        for (int l = 0; l < L; ++l) {
                            T acc = T(0);
                            for (int a = 0; a < da; ++a) acc += uij[a * L + l] * gj[a * L + l];
                            gcij[l] += acc;
                        }
                    }
            }
            if (iu >= 0) {
                auto& gu = t.grad_buf(iu);
                for (int i = 0; i < bi; ++i)
                    for (int j = 0; j < bo; ++j) {
                        const T* cij = c.data() + (static_cast<size_t>(i) * bo + j) * L;
                        const T* gj = g.data() + static_cast<size_t>(j) * da * L;
                        T* guij = gu.data() + (static_cast<size_t>(i) * bo + j) * da * L;
                        for (int a = 0; a < da; ++a)
                            for (int l = 0; l < L; ++l) guij[a * L + l] += cij[l] * gj[a * L + l];
                    }
            }
        }));
    }
    return out;
}

// uhat[bi,bo,da,L] x v[bo,da,L] -> <v_j, uhat_ij> as [bi,bo,L]
template <typename T>
TensorT<T> agreement(const TensorT<T>& uhat, const TensorT<T>& v) {
    if (uhat.rank() != 4 || v.rank() != 3) throw ShapeError("agreement: need uhat[bi,bo,da,L], v[bo,da,L]");
    const int bi = uhat.dim(0), bo = uhat.dim(1), da = uhat.dim(2), L = uhat.dim(3);
    if (v.dim(0) != bo || v.dim(1) != da || v.dim(2) != L)
        throw ShapeError("agreement: shape mismatch " + shape_str(uhat.shape()) + " vs " + shape_str(v.shape()));
    TensorT<T> out({bi, bo, L});
    for (int i = 0; i < bi; ++i)
        for (int j = 0; j < bo; ++j) {
            const T* uij = uhat.data() + (static_cast<size_t>(i) * bo + j) * da * L;
            const T* vj = v.data() + static_cast<size_t>(j) * da * L;
            T* bij = out.data() + (static_cast<size_t>(i) * bo + j) * L;
            for (int l = 0; l < L; ++l) {
                T acc = T(0);
                for (int a = 0; a < da; ++a) acc += uij[a * L + l] * vj[a * L + l];
                bij[l] = acc;
            }
        }
    if (auto* tp = TapeT<T>::active(); tp && (tp->tracks(uhat) || tp->tracks(v))) {
        int64_t iu = tp->id_of(uhat), iv = tp->id_of(v);
        out.set_node(tp->record(out.size(), [=](TapeT<T>& t, const std::vector<T>& g) {
            if (iu >= 0) {
                auto& gu = t.grad_buf(iu);
                for (int i = 0; i < bi; ++i)
                    for (int j = 0; j < bo; ++j) {
                        const T* vj = v.data() + static_cast<size_t>(j) * da * L;
                        const T* gij = g.data() + (static_cast<size_t>(i) * bo + j) * L;
                        T* guij = gu.data() + (static_cast<size_t>(i) * bo + j) * da * L;
                        for (int a = 0; a < da; ++a)
                            for (int l = 0; l < L; ++l) guij[a * L + l] += gij[l] * vj[a * L + l];
                    }
            }
            if (iv >= 0) {
                auto& gv = t.grad_buf(iv);
                for (int j = 0; j < bo; ++j) {
                    T* gvj = gv.data() + static_cast<size_t>(j) * da * L;
                    for (int i = 0; i < bi; ++i) {
                        const T* uij = uhat.data() + (static_cast<size_t>(i) * bo + j) * da * L;
                        const T* gij = g.data() + (static_cast<size_t>(i) * bo + j) * L;
                        for (int a = 0; a < da; ++a)
                            for (int l = 0; l < L; ++l) gvj[a * L + l] += gij[l] * uij[a * L + l];
                    }
                }
            }
        }));
    }
    return out;
}

}  // namespace cvgan
