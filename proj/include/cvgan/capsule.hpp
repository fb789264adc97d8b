#pragma once

#include <utility>
#include <vector>

#include "cvgan/ops.hpp"
#include "cvgan/rng.hpp"

// Capsule quantization layer: beta per-capsule convolutions extract views U of
// the latent, routing-by-agreement clusters their predictions into V, the L1
// norm over digits flattens V, and a transposed convolution maps the result
// back to the decoder's input resolution. The code-book quantizer used as the
// ablation baseline lives here too.

namespace cvgan {

struct CapsuleLayerConfig {
    int beta = 32;    // capsule count, in == out
    int d_u = 16;     // input digit width
    int d_a = 64;     // output digit width
    int alpha = 3;    // routing iterations
    int kernel = 8;   // per-capsule conv kernel; h = h_z - kernel + 1
    // When set, coupling coefficients are treated as constants in the
    // backward pass (gradient flows only through the prediction path).
    bool detach_coupling = false;
};

// One routing iteration's state, recorded for oracle comparison.
// b is the coupling-logit tensor after this iteration's agreement update.
template <typename T>
struct RoutingStep {
    TensorT<T> b, c, s, v;
};

template <typename T>
using RoutingTrace = std::vector<RoutingStep<T>>;

// Coupling coefficients from logits b[bi,bo,L]: softmax over the parent
// (beta_out) axis, so each child's row sums to 1.
template <typename T>
TensorT<T> coupling(const TensorT<T>& b) {
    if (b.rank() != 3) throw ShapeError("coupling: need b[bi,bo,L]");
    return softmax(b, 1);
}

// Routing-by-agreement over prediction vectors uhat[bi,bo,da,L]. Logits start
// at zero for every forward pass; each of the alpha iterations computes the
// coupling softmax over the parent axis, the coupled sum, the squashed output
// and the agreement update. The unrolled loop stays on the tape, so the
// whole procedure is differentiable w.r.t. uhat.
template <typename T>
TensorT<T> route(const TensorT<T>& uhat, int alpha, bool detach_coupling = false,
                 RoutingTrace<T>* trace = nullptr) {
    if (uhat.rank() != 4) throw ShapeError("route: need uhat[bi,bo,da,L]");
    if (alpha < 1) throw ContractError("route: alpha must be >= 1");
    const int bi = uhat.dim(0), bo = uhat.dim(1), L = uhat.dim(3);
    TensorT<T> b({bi, bo, L}, T(0));
    TensorT<T> v;
    for (int it = 0; it < alpha; ++it) {
        TensorT<T> c = coupling(b);
        if (detach_coupling) c = c.detach();
        TensorT<T> s = coupled_sum(c, uhat);
        v = squash(s, 1);
        b = add(b, agreement(uhat, v));
        if (trace) trace->push_back({b.detach().clone(), c.detach().clone(), s.detach().clone(), v.detach().clone()});
    }
    return v;
}

template <typename T>
struct CapsuleLayerT {
    CapsuleLayerConfig cfg;
    std::vector<TensorT<T>> cap_w;  // beta entries of [d_u, c_z, k, k]
    std::vector<TensorT<T>> cap_b;  // beta entries of [d_u]
    TensorT<T> transform;           // W[beta_in, beta_out, d_u, d_a]
    TensorT<T> out_w;               // transposed-conv weight [beta, c_out, k, k]
    TensorT<T> out_b;               // [c_out]

    void init(int c_z, int c_out, Rng& rng) {
        cap_w.clear();
        cap_b.clear();
        double std_conv = std::sqrt(2.0 / (static_cast<double>(c_z) * cfg.kernel * cfg.kernel));
        for (int i = 0; i < cfg.beta; ++i) {
            TensorT<T> w({cfg.d_u, c_z, cfg.kernel, cfg.kernel});
            for (size_t q = 0; q < w.size(); ++q) w[q] = static_cast<T>(rng.normal(0.0, std_conv));
            cap_w.push_back(w.set_requires_grad(true));
            cap_b.push_back(TensorT<T>({cfg.d_u}, T(0)).set_requires_grad(true));
        }
        double std_tr = std::sqrt(2.0 / static_cast<double>(cfg.d_u + cfg.d_a));
        transform = TensorT<T>({cfg.beta, cfg.beta, cfg.d_u, cfg.d_a});
        for (size_t q = 0; q < transform.size(); ++q) transform[q] = static_cast<T>(rng.normal(0.0, std_tr));
        transform.set_requires_grad(true);
        double std_out = std::sqrt(2.0 / (static_cast<double>(cfg.beta) * cfg.kernel * cfg.kernel));
        out_w = TensorT<T>({cfg.beta, c_out, cfg.kernel, cfg.kernel});
        for (size_t q = 0; q < out_w.size(); ++q) out_w[q] = static_cast<T>(rng.normal(0.0, std_out));
        out_w.set_requires_grad(true);
        out_b = TensorT<T>({c_out}, T(0));
        out_b.set_requires_grad(true);
    }

    template <typename F>
    void visit(const std::string& prefix, F&& f) {
        for (size_t i = 0; i < cap_w.size(); ++i) {
            f(prefix + ".cap" + std::to_string(i) + ".w", cap_w[i]);
            f(prefix + ".cap" + std::to_string(i) + ".b", cap_b[i]);
        }
        f(prefix + ".transform", transform);
        f(prefix + ".out.w", out_w);
        f(prefix + ".out.b", out_b);
    }
};

// z[c_z,h_z,w_z] -> C[c_out,h_z,w_z]. Intermediate shapes: U[beta,d_u,h,w],
// V[beta,d_a,h,w] with h = h_z - kernel + 1.
template <typename T>
TensorT<T> capsule_forward(const TensorT<T>& z, const CapsuleLayerT<T>& layer,
                           RoutingTrace<T>* trace = nullptr) {
    if (z.rank() != 3) throw ShapeError("capsule_forward: need z[c,h,w]");
    const auto& cfg = layer.cfg;
    if (static_cast<int>(layer.cap_w.size()) != cfg.beta || layer.cap_w.empty())
        throw ContractError("capsule_forward: layer not initialized");
    if (z.dim(0) != layer.cap_w[0].dim(1))
        throw ShapeError("capsule_forward: latent channels " + std::to_string(z.dim(0)) +
                         " do not match capsule convs");
    std::vector<TensorT<T>> views;
    views.reserve(static_cast<size_t>(cfg.beta));
    for (int i = 0; i < cfg.beta; ++i)
        views.push_back(add_channel_bias(conv2d(z, layer.cap_w[static_cast<size_t>(i)], 1, 0),
                                         layer.cap_b[static_cast<size_t>(i)]));
    const int h = views[0].dim(1), w = views[0].dim(2);
    TensorT<T> u = stack0(views);                                  // [beta, d_u, h, w]
    u = reshape(u, {cfg.beta, cfg.d_u, h * w});                    // [beta, d_u, L]
    TensorT<T> uhat = capsule_predict(u, layer.transform);         // [beta, beta, d_a, L]
    TensorT<T> v = route(uhat, cfg.alpha, cfg.detach_coupling, trace);
    TensorT<T> agg = reduce_norm(v, 1, 1);                         // [beta, L]
    agg = reshape(agg, {cfg.beta, h, w});
    return add_channel_bias(conv_transpose2d(agg, layer.out_w, 1, 0), layer.out_b);
}

// ---------------------------------------------------------------------------
// code-book vector quantization (ablation baseline)
// ---------------------------------------------------------------------------

template <typename T>
struct CodebookT {
    TensorT<T> entries;  // [K, M]

    static CodebookT random(int k, int m, Rng& rng) {
        if (k < 1 || m < 1) throw ContractError("codebook: K and M must be >= 1");
        CodebookT cb;
        cb.entries = TensorT<T>({k, m});
        for (size_t i = 0; i < cb.entries.size(); ++i) cb.entries[i] = static_cast<T>(rng.normal());
        return cb;
    }
};

// Replaces each row of z[N,M] by its nearest code-book entry (Euclidean,
// lowest index on ties). The backward pass is the straight-through estimator:
// gradients are copied to z unchanged, ignoring the quantization step.
template <typename T>
std::pair<TensorT<T>, std::vector<int>> vq_quantize(const TensorT<T>& z, const CodebookT<T>& cb) {
    if (cb.entries.size() == 0) throw ContractError("vq_quantize: empty codebook");
    if (z.rank() != 2 || z.dim(1) != cb.entries.dim(1))
        throw ShapeError("vq_quantize: vector width must match codebook entries");
    const int n = z.dim(0), m = z.dim(1), k = cb.entries.dim(0);
    TensorT<T> out(z.shape());
    std::vector<int> idx(static_cast<size_t>(n));
    for (int r = 0; r < n; ++r) {
        const T* zr = z.data() + static_cast<size_t>(r) * m;
        T best = T(0);
        int best_k = 0;
        for (int e = 0; e < k; ++e) {
            const T* ce = cb.entries.data() + static_cast<size_t>(e) * m;
            T d = T(0);
            for (int q = 0; q < m; ++q) {
                T diff = zr[q] - ce[q];
                d += diff * diff;
            }
            if (e == 0 || d < best) {
                best = d;
                best_k = e;
            }
        }
        idx[static_cast<size_t>(r)] = best_k;
        std::copy(cb.entries.data() + static_cast<size_t>(best_k) * m,
                  cb.entries.data() + (static_cast<size_t>(best_k) + 1) * m,
                  out.data() + static_cast<size_t>(r) * m);
    }
    if (auto* tp = TapeT<T>::active(); tp && tp->tracks(z)) {
        int64_t iz = tp->id_of(z);
        out.set_node(tp->record(out.size(), [iz](TapeT<T>& t, const std::vector<T>& g) {
            auto& gz = t.grad_buf(iz);
            for (size_t i = 0; i < g.size(); ++i) gz[i] += g[i];
        }));
    }
    return {out, idx};
}

}  // namespace cvgan
