#pragma once

#include <vector>

#include "retinex/image.hpp"

namespace retinex {

/// Edge-preserving smoothing of reflectance before reconstruction. Strength
/// follows the illumination map, so dark regions are filtered hardest.
struct DenoiseConfig {
    float base_strength = 0.1f;         // filter strength h, in [0,1]
    int window = 3;                     // patch radius
    int search = 7;                     // search radius
    float illumination_exponent = 1.0f; // p >= 0 in w = (1 - I)^p

    void require_valid() const;
};

// Non-local means: each pixel becomes a similarity-weighted average over its
// search window, weights exp(-patch_distance^2 / h^2) with the patch distance
// taken as the mean squared difference over window patches (reflected at the
// borders). h = 0 returns the input bit for bit; constant images are fixed
// points.
ImageRGB base_denoiser(const ImageRGB& img, float h, const DenoiseConfig& cfg);

// Blend between the input and its fully denoised version by w = (1 - I)^p:
// out = (1 - w) * R + w * base_denoiser(R, base_strength). w = 0 passes R
// through exactly; w = 1 yields the filtered image exactly. illumination is
// a row-major height*width plane with values in [0,1].
ImageRGB denoise_reflectance(const ImageRGB& R, const std::vector<float>& illumination,
                             const DenoiseConfig& cfg);

}  // namespace retinex
