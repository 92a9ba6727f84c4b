#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "retinex/tensor.hpp"

namespace retinex {

/// Interleaved RGB raster with intensities in [0,1].
struct ImageRGB {
    int width = 0;
    int height = 0;
    std::vector<float> pixels;  // height * width * 3, row-major, RGB per pixel

    float& at(int y, int x, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    float at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
};

ImageRGB make_image(int width, int height, float fill = 0.0f);

// 8-bit RGB PNG I/O. Reading expands grayscale/palette and drops alpha;
// 16-bit files are rejected. Writing quantizes with round-half-up.
ImageRGB read_png(const std::string& path);
void write_png(const std::string& path, const ImageRGB& img);

/// Planar YCbCr raster, BT.601 studio range: Y in [16,235], Cb/Cr in [16,240]
/// for RGB inputs in [0,1].
struct ImageYCbCr {
    int width = 0;
    int height = 0;
    std::vector<float> y, cb, cr;
};

ImageYCbCr rgb_to_ycbcr(const ImageRGB& img);
ImageRGB ycbcr_to_rgb(const ImageYCbCr& img);

/// Pooled luma histogram: 225 unit-width bins labeled 16..240.
struct YHistogram {
    static constexpr int kBins = 225;
    static constexpr int kFirstBin = 16;
    std::array<std::int64_t, kBins> bins{};
    std::int64_t total = 0;

    void add(const ImageRGB& img);
    double mean_y() const;
};

YHistogram y_histogram(const std::vector<ImageRGB>& images);
void write_histogram_csv(const YHistogram& hist, const std::string& path);
YHistogram read_histogram_csv(const std::string& path);

/// Sum of absolute differences between the two normalized distributions.
double histogram_distance(const YHistogram& a, const YHistogram& b);

/// Parametric exposure degradation standing in for a raw-processing pipeline:
/// out = clamp(beta * v^gamma + N(0, noise_sigma), 0, 1) per channel.
struct DarkeningParams {
    double gamma = 2.0;        // >= 1
    double beta = 0.5;         // (0, 1]
    double noise_sigma = 0.01; // [0, 1]
};

ImageRGB synth_low_light(const ImageRGB& img, const DarkeningParams& p, std::mt19937_64& rng);

struct DarkeningFit {
    DarkeningParams params;
    double distance = 0.0;  // achieved normalized-histogram L1 distance
};

/// Grid search (gamma 1..5 step 0.25, beta 0.05..1 step 0.05, sigma fixed)
/// for the darkening whose pooled Y histogram is closest to the target.
/// Ties prefer smaller gamma, then larger beta. Deterministic.
DarkeningFit fit_darkening_params(const std::vector<ImageRGB>& normal_images,
                                  const YHistogram& target, double noise_sigma = 0.01);

// Raster <-> graph-tensor bridges.
TensorFPtr image_to_tensor(const ImageRGB& img);                       // [1,3,H,W]
ImageRGB tensor_to_image(const TensorFPtr& t, int batch_index = 0);    // clamps to [0,1]
ImageRGB gray_tensor_to_image(const TensorFPtr& t, int batch_index = 0);  // [B,1,H,W] -> gray RGB

}  // namespace retinex
