#include "retinex/denoise.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "retinex/errors.hpp"

namespace retinex {

namespace {

// Mirror an index into [0, n) without repeating the border sample
// (…2 1 | 0 1 2 … n-1 | n-2 n-3…).
int reflect101(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = std::abs(i) % period;
    return i < n ? i : period - i;
}

// Mean squared difference between the patches centred on (ya,xa) and (yb,xb).
double patch_distance_sq(const ImageRGB& img, int ya, int xa, int yb, int xb, int radius) {
    double sum = 0;
    for (int dy = -radius; dy <= radius; ++dy) {
        const int ra = reflect101(ya + dy, img.height);
        const int rb = reflect101(yb + dy, img.height);
        for (int dx = -radius; dx <= radius; ++dx) {
            const int ca = reflect101(xa + dx, img.width);
            const int cb = reflect101(xb + dx, img.width);
            for (int c = 0; c < 3; ++c) {
                const double d = static_cast<double>(img.at(ra, ca, c)) -
                                 static_cast<double>(img.at(rb, cb, c));
                sum += d * d;
            }
        }
    }
    const int side = 2 * radius + 1;
    return sum / (3.0 * side * side);
}

}  // namespace

void DenoiseConfig::require_valid() const {
    if (window < 1) throw ConfigError("denoise window radius must be >= 1");
    if (search < 1) throw ConfigError("denoise search radius must be >= 1");
    if (!(base_strength >= 0.0f)) throw ConfigError("denoise base_strength must be >= 0");
    if (!(illumination_exponent >= 0.0f))
        throw ConfigError("denoise illumination_exponent must be >= 0");
}

ImageRGB base_denoiser(const ImageRGB& img, float h, const DenoiseConfig& cfg) {
    cfg.require_valid();
    if (!(h >= 0.0f)) throw ConfigError("denoise filter strength must be >= 0");
    if (h == 0.0f) return img;

    const double inv_h2 = 1.0 / (static_cast<double>(h) * static_cast<double>(h));
    ImageRGB out = make_image(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double weight_sum = 0;
            double delta[3] = {0, 0, 0};
            for (int dy = -cfg.search; dy <= cfg.search; ++dy) {
                const int qy = reflect101(y + dy, img.height);
                for (int dx = -cfg.search; dx <= cfg.search; ++dx) {
                    const int qx = reflect101(x + dx, img.width);
                    const double d2 = patch_distance_sq(img, y, x, qy, qx, cfg.window);
                    const double w = std::exp(-d2 * inv_h2);
                    weight_sum += w;
                    for (int c = 0; c < 3; ++c)
                        delta[c] += w * (static_cast<double>(img.at(qy, qx, c)) -
                                         static_cast<double>(img.at(y, x, c)));
                }
            }
            // Difference form of the weighted average: exact at fixed points,
            // and weight_sum >= 1 from the self term.
            for (int c = 0; c < 3; ++c) {
                const float v =
                    static_cast<float>(static_cast<double>(img.at(y, x, c)) + delta[c] / weight_sum);
                out.at(y, x, c) = std::min(1.0f, std::max(0.0f, v));
            }
        }
    }
    return out;
}

ImageRGB denoise_reflectance(const ImageRGB& R, const std::vector<float>& illumination,
                             const DenoiseConfig& cfg) {
    cfg.require_valid();
    if (illumination.size() != R.pixel_count())
        throw ShapeError("illumination map has " + std::to_string(illumination.size()) +
                         " values but the reflectance image has " +
                         std::to_string(R.pixel_count()) + " pixels");
    for (const float v : illumination)
        if (!(v >= 0.0f && v <= 1.0f))
            throw NumericError("illumination values must lie in [0,1]");

    const ImageRGB denoised = base_denoiser(R, cfg.base_strength, cfg);
    ImageRGB out = make_image(R.width, R.height);
    for (std::size_t i = 0; i < R.pixel_count(); ++i) {
        const double w = std::pow(1.0 - static_cast<double>(illumination[i]),
                                  static_cast<double>(cfg.illumination_exponent));
        for (std::size_t c = 0; c < 3; ++c) {
            const float r = R.pixels[i * 3 + c];
            const float d = denoised.pixels[i * 3 + c];
            float v;
            if (w <= 0.0) {
                v = r;  // exact pass-through
            } else if (w >= 1.0) {
                v = d;  // exact full-strength output
            } else {
                v = static_cast<float>((1.0 - w) * static_cast<double>(r) +
                                       w * static_cast<double>(d));
                v = std::min(1.0f, std::max(0.0f, v));
            }
            out.pixels[i * 3 + c] = v;
        }
    }
    return out;
}

}  // namespace retinex
