#pragma once

#include <optional>

#include "retinex/denoise.hpp"
#include "retinex/image.hpp"
#include "retinex/model.hpp"

namespace retinex {

struct EnhanceOptions {
    bool bypass_adjustment = false;  // reuse the decomposed illumination unchanged
};

/// Full enhancement record. The one-channel illumination maps are rendered as
/// gray RGB (all three channels equal) so every field saves directly as a PNG.
struct EnhanceResult {
    ImageRGB S_hat;
    ImageRGB R;
    ImageRGB I;
    ImageRGB I_hat;
};

// Decomposition, illumination adjustment, optional illumination-relative
// denoising of reflectance, reconstruction. The input is reflect-padded to
// the adjustment net's divisibility requirement and every output is cropped
// back to the input size.
EnhanceResult enhance_image(const ImageRGB& S_low, const WeightStore& w,
                            const std::optional<DenoiseConfig>& denoise_cfg = std::nullopt,
                            const EnhanceOptions& options = {});

/// 10*log10(1/MSE) over all channels; identical images report +infinity.
double psnr(const ImageRGB& a, const ImageRGB& b);

/// Single-scale SSIM on luma (0.299, 0.587, 0.114 weights): 11x11 Gaussian
/// window with sigma 1.5, C1 = 0.01^2, C2 = 0.03^2, averaged over fully
/// covered windows. Both extents must be at least 11.
double ssim(const ImageRGB& a, const ImageRGB& b);

}  // namespace retinex
