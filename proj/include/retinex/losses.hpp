#pragma once

#include <string>

#include "retinex/tensor.hpp"

namespace retinex {

/// Loss coefficients. lambda_ij is indexed [reflectance source][target image]
/// with 0 = low, 1 = normal; the diagonal couples each image to its own
/// illumination, the off-diagonal entries tie the two decompositions together.
template <typename T>
struct LossWeightsT {
    T lambda_ir = T(0.001);
    T lambda_is = T(0.1);
    T lambda_g = T(10);
    T lambda_ij[2][2] = {{T(1), T(0.001)}, {T(0.001), T(1)}};
};

using LossWeights = LossWeightsT<float>;

template <typename T>
struct DecomLossTermsT {
    TensorPtr<T> total;
    TensorPtr<T> recon;
    TensorPtr<T> ir;
    TensorPtr<T> is;
};

template <typename T>
struct EnhanceLossTermsT {
    TensorPtr<T> total;
    TensorPtr<T> recon;
    TensorPtr<T> is;
};

namespace detail {

template <typename T>
void require_illumination(const TensorPtr<T>& illum, const char* op) {
    require_4d(illum, op);
    if (illum->channels() != 1) {
        throw ShapeError(std::string(op) + ": illumination channel dimension must be 1, got " +
                         std::to_string(illum->channels()));
    }
}

}  // namespace detail

/// Reconstruction objective: every reflectance combined with every
/// illumination must re-compose the matching source image,
/// sum of lambda_ij * mean|R_i o I_j - S_j|.
template <typename T>
TensorPtr<T> recon_loss(const TensorPtr<T>& R_low, const TensorPtr<T>& I_low,
                        const TensorPtr<T>& R_normal, const TensorPtr<T>& I_normal,
                        const TensorPtr<T>& S_low, const TensorPtr<T>& S_normal,
                        const LossWeightsT<T>& lw) {
    detail::require_illumination(I_low, "recon_loss");
    detail::require_illumination(I_normal, "recon_loss");
    const TensorPtr<T> refl[2] = {R_low, R_normal};
    const TensorPtr<T> illum[2] = {I_low, I_normal};
    const TensorPtr<T> source[2] = {S_low, S_normal};
    TensorPtr<T> total;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) {
            auto term = scale(reduce_mean_abs(sub(mul(refl[i], illum[j]), source[j])),
                              lw.lambda_ij[i][j]);
            total = total ? add(total, term) : term;
        }
    return total;
}

/// Reflectance is scene property, not lighting: mean|R_low - R_normal|.
template <typename T>
TensorPtr<T> invariable_reflectance_loss(const TensorPtr<T>& R_low, const TensorPtr<T>& R_normal) {
    return reduce_mean_abs(sub(R_low, R_normal));
}

/// Per-pixel attenuation exp(-lambda_g * G_d(R)) where G_d(R) is the
/// channel-mean absolute reflectance gradient along the given axis.
/// Equals 1 where R is flat and decays toward 0 across structure edges.
template <typename T>
TensorPtr<T> smoothness_weight(const TensorPtr<T>& R, T lambda_g, GradientAxis axis) {
    return exp(scale(mean_channels(abs(spatial_gradient(R, axis))), -lambda_g));
}

/// Structure-aware total variation of an illumination map: mean absolute
/// illumination gradient, attenuated where the reflectance has edges, summed
/// over the horizontal and vertical directions. With stop_gradient_on_weight
/// the attenuation term is treated as a constant during backprop.
template <typename T>
TensorPtr<T> smoothness_loss(const TensorPtr<T>& I, const TensorPtr<T>& R, T lambda_g,
                             bool stop_gradient_on_weight = false) {
    detail::require_illumination(I, "smoothness_loss");
    detail::require_4d(R, "smoothness_loss");
    TensorPtr<T> total;
    for (auto axis : {GradientAxis::horizontal, GradientAxis::vertical}) {
        auto weight = smoothness_weight(R, lambda_g, axis);
        if (stop_gradient_on_weight) weight = detach(weight);
        auto term = reduce_mean(mul(abs(spatial_gradient(I, axis)), weight));
        total = total ? add(total, term) : term;
    }
    return total;
}

/// Full decomposition objective: reconstruction, reflectance consistency, and
/// the smoothness of both illumination maps against their own reflectances.
template <typename T>
DecomLossTermsT<T> decom_total_loss(const TensorPtr<T>& R_low, const TensorPtr<T>& I_low,
                                    const TensorPtr<T>& R_normal, const TensorPtr<T>& I_normal,
                                    const TensorPtr<T>& S_low, const TensorPtr<T>& S_normal,
                                    const LossWeightsT<T>& lw,
                                    bool stop_gradient_on_weight = false) {
    DecomLossTermsT<T> terms;
    terms.recon = recon_loss(R_low, I_low, R_normal, I_normal, S_low, S_normal, lw);
    terms.ir = invariable_reflectance_loss(R_low, R_normal);
    terms.is = add(smoothness_loss(I_low, R_low, lw.lambda_g, stop_gradient_on_weight),
                   smoothness_loss(I_normal, R_normal, lw.lambda_g, stop_gradient_on_weight));
    terms.total = add(terms.recon, add(scale(terms.ir, lw.lambda_ir), scale(terms.is, lw.lambda_is)));
    return terms;
}

/// Adjustment objective: the low reflectance under the adjusted illumination
/// must match the normal-light image, with the adjusted map kept
/// structure-aware smooth against that reflectance.
template <typename T>
EnhanceLossTermsT<T> enhance_loss(const TensorPtr<T>& R_low, const TensorPtr<T>& I_hat,
                                  const TensorPtr<T>& S_normal, const LossWeightsT<T>& lw,
                                  bool stop_gradient_on_weight = false) {
    detail::require_illumination(I_hat, "enhance_loss");
    EnhanceLossTermsT<T> terms;
    terms.recon = reduce_mean_abs(sub(mul(R_low, I_hat), S_normal));
    terms.is = smoothness_loss(I_hat, R_low, lw.lambda_g, stop_gradient_on_weight);
    terms.total = add(terms.recon, scale(terms.is, lw.lambda_is));
    return terms;
}

}  // namespace retinex
