#include "retinex/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>
#include <vector>

#include "retinex/errors.hpp"

namespace retinex {

namespace {

// Mirror an index into [0, n) without repeating the border sample.
int reflect101(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i = std::abs(i) % period;
    return i < n ? i : period - i;
}

// Smallest multiple of `multiple` that admits both nets: at least 8 per axis
// for the decomposition and divisible by 2^num_scales for the adjustment.
int padded_extent(int extent, int multiple) {
    const int base = std::max(extent, 8);
    return (base + multiple - 1) / multiple * multiple;
}

ImageRGB pad_reflect(const ImageRGB& img, int target_w, int target_h) {
    ImageRGB out = make_image(target_w, target_h);
    for (int y = 0; y < target_h; ++y) {
        const int sy = reflect101(y, img.height);
        for (int x = 0; x < target_w; ++x) {
            const int sx = reflect101(x, img.width);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

}  // namespace

EnhanceResult enhance_image(const ImageRGB& S_low, const WeightStore& w,
                            const std::optional<DenoiseConfig>& denoise_cfg,
                            const EnhanceOptions& options) {
    if (S_low.width < 1 || S_low.height < 1 ||
        S_low.pixels.size() != S_low.pixel_count() * 3)
        throw ShapeError("enhance_image needs a nonempty interleaved RGB image");
    (void)infer_decom_config(w);
    const EnhanceNetConfig net = infer_enhance_config(w);

    const int multiple = 1 << net.num_scales;
    const int target_w = padded_extent(S_low.width, multiple);
    const int target_h = padded_extent(S_low.height, multiple);
    const bool needs_pad = target_w != S_low.width || target_h != S_low.height;
    const ImageRGB work = needs_pad ? pad_reflect(S_low, target_w, target_h) : S_low;

    NoGradGuard guard;
    const TensorFPtr S = image_to_tensor(work);
    const DecomOutput dec = decom_forward(w, S);
    const TensorFPtr adjusted =
        options.bypass_adjustment ? dec.I : enhance_forward(w, dec.R, dec.I);

    const int W = S_low.width;
    const int H = S_low.height;
    ImageRGB R_img = make_image(W, H);
    std::vector<float> I_plane(static_cast<std::size_t>(W) * H);
    std::vector<float> I_hat_plane(I_plane.size());
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            for (int c = 0; c < 3; ++c) R_img.at(y, x, c) = dec.R->at(0, c, y, x);
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            I_plane[i] = dec.I->at(0, 0, y, x);
            I_hat_plane[i] = adjusted->at(0, 0, y, x);
        }
    }

    const ImageRGB reflectance =
        denoise_cfg ? denoise_reflectance(R_img, I_plane, *denoise_cfg) : R_img;

    EnhanceResult result;
    result.R = R_img;
    result.I = make_image(W, H);
    result.I_hat = make_image(W, H);
    result.S_hat = make_image(W, H);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            for (int c = 0; c < 3; ++c) {
                result.I.at(y, x, c) = I_plane[i];
                result.I_hat.at(y, x, c) = I_hat_plane[i];
                const float v = reflectance.at(y, x, c) * I_hat_plane[i];
                result.S_hat.at(y, x, c) = std::min(1.0f, std::max(0.0f, v));
            }
        }
    }
    return result;
}

double psnr(const ImageRGB& a, const ImageRGB& b) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError("psnr needs equal sizes, got " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " and " + std::to_string(b.width) + "x" +
                         std::to_string(b.height));
    if (a.pixels.empty()) throw ShapeError("psnr needs nonempty images");
    long double acc = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
        acc += d * d;
    }
    const double mse = static_cast<double>(acc / static_cast<long double>(a.pixels.size()));
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ImageRGB& a, const ImageRGB& b) {
    if (a.width != b.width || a.height != b.height)
        throw ShapeError("ssim needs equal sizes, got " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + " and " + std::to_string(b.width) + "x" +
                         std::to_string(b.height));
    constexpr int kRadius = 5;
    constexpr int kSide = 2 * kRadius + 1;
    if (a.width < kSide || a.height < kSide)
        throw ShapeError("ssim needs both extents >= 11, got " + std::to_string(a.width) + "x" +
                         std::to_string(a.height));

    const std::size_t n = a.pixel_count();
    std::vector<double> la(n), lb(n);
    for (std::size_t i = 0; i < n; ++i) {
        la[i] = 0.299 * a.pixels[i * 3] + 0.587 * a.pixels[i * 3 + 1] + 0.114 * a.pixels[i * 3 + 2];
        lb[i] = 0.299 * b.pixels[i * 3] + 0.587 * b.pixels[i * 3 + 1] + 0.114 * b.pixels[i * 3 + 2];
    }

    double window[kSide][kSide];
    double wsum = 0;
    for (int dy = -kRadius; dy <= kRadius; ++dy)
        for (int dx = -kRadius; dx <= kRadius; ++dx) {
            const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
            window[dy + kRadius][dx + kRadius] = g;
            wsum += g;
        }
    for (auto& row : window)
        for (auto& v : row) v /= wsum;

    constexpr double C1 = 0.01 * 0.01;
    constexpr double C2 = 0.03 * 0.03;
    double acc = 0;
    std::int64_t count = 0;
    for (int cy = kRadius; cy < a.height - kRadius; ++cy) {
        for (int cx = kRadius; cx < a.width - kRadius; ++cx) {
            double mu_a = 0, mu_b = 0, aa = 0, bb = 0, ab = 0;
            for (int dy = -kRadius; dy <= kRadius; ++dy)
                for (int dx = -kRadius; dx <= kRadius; ++dx) {
                    const double g = window[dy + kRadius][dx + kRadius];
                    const std::size_t i =
                        static_cast<std::size_t>(cy + dy) * a.width + (cx + dx);
                    mu_a += g * la[i];
                    mu_b += g * lb[i];
                    aa += g * la[i] * la[i];
                    bb += g * lb[i] * lb[i];
                    ab += g * la[i] * lb[i];
                }
            const double var_a = aa - mu_a * mu_a;
            const double var_b = bb - mu_b * mu_b;
            const double cov = ab - mu_a * mu_b;
            acc += ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2)) /
                   ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

}  // namespace retinex
