#pragma once

#include <algorithm>

#include "cvgan/ops.hpp"

// Training objective: mean-squared reconstruction, non-saturating adversarial
// terms on patch logits, the adaptive balance weight lambda, and the
// gradient-difference sharpening loss used during fine-tuning.

namespace cvgan {

// Mean squared error over all elements.
template <typename T>
TensorT<T> rec_loss(const TensorT<T>& y, const TensorT<T>& yhat) {
    detail::check_same_shape(y, yhat, "rec_loss");
    TensorT<T> d = sub(y, yhat);
    return mean_all(mul(d, d));
}

template <typename T>
struct GanTerms {
    TensorT<T> g;  // generator term: -mean log sigma(d_fake)
    TensorT<T> d;  // discriminator term: -mean log sigma(d_real) - mean log sigma(-d_fake)
};

// Both terms go through the stable softplus, so they stay finite for any
// finite logits. lambda scales the generator term inside the combined totals
// only; scale_d replicates the printed objective where the discriminator loss
// is scaled by lambda as well (off by default).
template <typename T>
GanTerms<T> gan_loss(const TensorT<T>& d_real, const TensorT<T>& d_fake, T lambda = T(1),
                     bool scale_d = false) {
    TensorT<T> d_term =
        add(mean_all(softplus(mul_scalar(d_real, T(-1)))), mean_all(softplus(d_fake)));
    if (scale_d) d_term = mul_scalar(d_term, lambda);
    TensorT<T> g_term = mean_all(softplus(mul_scalar(d_fake, T(-1))));
    return {g_term, d_term};
}

// lambda = |grad_rec| / (|grad_gan| + delta), clamped to [0, lambda_max].
// Treated as a constant in the backward pass.
inline double adaptive_lambda(double grad_rec_norm, double grad_gan_norm, double delta,
                              double lambda_max = 1e4) {
    if (grad_rec_norm < 0.0 || grad_gan_norm < 0.0)
        throw ContractError("adaptive_lambda: gradient norms must be >= 0");
    double l = grad_rec_norm / (grad_gan_norm + delta);
    return std::clamp(l, 0.0, lambda_max);
}

// Gradient difference loss: sum over pixels of
// ||Y_ij - Y_(i-1)j| - |Yh_ij - Yh_(i-1)j||^gamma plus the horizontal twin,
// with forward neighbor differences (last row/column dropped).
template <typename T>
TensorT<T> gdl(const TensorT<T>& y, const TensorT<T>& yhat, int gamma = 1) {
    detail::check_same_shape(y, yhat, "gdl");
    if (y.rank() != 3 || y.dim(1) < 2 || y.dim(2) < 2) throw ShapeError("gdl: need [C,H>=2,W>=2]");
    if (gamma < 1) throw ContractError("gdl: gamma must be an integer >= 1");
    TensorT<T> v = powi(abs_t(sub(abs_t(diff_v(y)), abs_t(diff_v(yhat)))), gamma);
    TensorT<T> h = powi(abs_t(sub(abs_t(diff_h(y)), abs_t(diff_h(yhat)))), gamma);
    return add(sum_all(v), sum_all(h));
}

// Per-step scalar record of the training objective.
struct LossBundle {
    double rec = 0.0;
    double gan_g = 0.0;
    double gan_d = 0.0;
    double gdl = 0.0;
    double lambda = 0.0;
    double total = 0.0;
};

// Pretraining objective: rec + lambda * gan_g.
inline double combined_pretrain(double rec, double gan_g, double lambda) {
    return rec + lambda * gan_g;
}

// Fine-tuning objective: rec + lambda * gan_g + gdl.
inline double combined_finetune(double rec, double gan_g, double lambda, double gdl_term) {
    return rec + lambda * gan_g + gdl_term;
}

}  // namespace cvgan
