#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "retinex/denoise.hpp"
#include "retinex/errors.hpp"
#include "retinex/random.hpp"

using namespace retinex;

namespace {

ImageRGB noisy_constant(int width, int height, float level, double sigma, std::mt19937_64& rng) {
    ImageRGB img = make_image(width, height);
    for (auto& v : img.pixels) {
        const double noisy = level + sigma * rand_normal(rng);
        v = static_cast<float>(std::min(1.0, std::max(0.0, noisy)));
    }
    return img;
}

ImageRGB random_image(int width, int height, std::mt19937_64& rng) {
    ImageRGB img = make_image(width, height);
    for (auto& v : img.pixels) v = static_cast<float>(rand_uniform(rng));
    return img;
}

double variance(const std::vector<float>& values) {
    double mean = 0;
    for (const float v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double acc = 0;
    for (const float v : values) acc += (v - mean) * (v - mean);
    return acc / static_cast<double>(values.size());
}

DenoiseConfig small_cfg() {
    DenoiseConfig cfg;
    cfg.window = 2;
    cfg.search = 3;
    return cfg;
}

}  // namespace

TEST_CASE("zero filter strength returns the input bit for bit") {
    std::mt19937_64 rng(101);
    const auto img = random_image(9, 7, rng);
    const auto out = base_denoiser(img, 0.0f, small_cfg());
    REQUIRE(out.pixels.size() == img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(out.pixels[i] == img.pixels[i]);
}

TEST_CASE("constant images are fixed points at any strength") {
    for (const float h : {0.05f, 0.3f, 1.0f}) {
        const auto img = make_image(10, 6, 0.37f);
        const auto out = base_denoiser(img, h, small_cfg());
        for (const float v : out.pixels) CHECK(v == 0.37f);
    }
}

TEST_CASE("filtering a noisy constant reduces its variance") {
    std::mt19937_64 rng(102);
    DenoiseConfig cfg;  // default radii
    const auto img = noisy_constant(24, 24, 0.5f, 0.05, rng);
    const auto out = base_denoiser(img, 0.1f, cfg);
    const double var_in = variance(img.pixels);
    const double var_out = variance(out.pixels);
    CHECK(var_out < var_in);
    CHECK(var_out < 0.5 * var_in);
}

TEST_CASE("single-pixel and tiny images survive border reflection") {
    std::mt19937_64 rng(103);
    const auto one = random_image(1, 1, rng);
    const auto out1 = base_denoiser(one, 0.2f, small_cfg());
    // every reflected neighbour is the pixel itself, so nothing moves
    for (std::size_t i = 0; i < 3; ++i) CHECK(out1.pixels[i] == one.pixels[i]);

    const auto two = random_image(2, 2, rng);
    const auto out2 = base_denoiser(two, 0.2f, small_cfg());
    REQUIRE(out2.pixels.size() == two.pixels.size());
    for (const float v : out2.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("a sharp step survives filtering with a small strength") {
    ImageRGB img = make_image(16, 8);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = x < 8 ? 0.2f : 0.8f;
    const auto out = base_denoiser(img, 0.05f, small_cfg());
    float max_change = 0.0f;
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        max_change = std::max(max_change, std::abs(out.pixels[i] - img.pixels[i]));
    CHECK(max_change < 1e-3f);
}

TEST_CASE("full illumination passes reflectance through exactly") {
    std::mt19937_64 rng(104);
    const auto R = random_image(8, 8, rng);
    const std::vector<float> bright(R.pixel_count(), 1.0f);
    const auto out = denoise_reflectance(R, bright, small_cfg());
    for (std::size_t i = 0; i < R.pixels.size(); ++i) CHECK(out.pixels[i] == R.pixels[i]);
}

TEST_CASE("zero illumination yields the fully filtered image exactly") {
    std::mt19937_64 rng(105);
    const auto R = random_image(8, 8, rng);
    DenoiseConfig cfg = small_cfg();
    cfg.base_strength = 0.15f;
    const std::vector<float> dark(R.pixel_count(), 0.0f);
    const auto out = denoise_reflectance(R, dark, cfg);
    const auto full = base_denoiser(R, cfg.base_strength, cfg);
    for (std::size_t i = 0; i < R.pixels.size(); ++i) CHECK(out.pixels[i] == full.pixels[i]);
}

TEST_CASE("dark half keeps less residual noise than the bright half") {
    DenoiseConfig cfg = small_cfg();
    cfg.base_strength = 0.1f;
    for (const unsigned seed : {201u, 202u, 203u}) {
        std::mt19937_64 rng(seed);
        const int w = 16, h = 16;
        const auto R = noisy_constant(w, h, 0.5f, 0.04, rng);
        std::vector<float> illum(static_cast<std::size_t>(w) * h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                illum[static_cast<std::size_t>(y) * w + x] = x < w / 2 ? 0.1f : 0.9f;
        const auto out = denoise_reflectance(R, illum, cfg);
        std::vector<float> left, right;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c)
                    (x < w / 2 ? left : right).push_back(out.at(y, x, c));
        CHECK(variance(left) < variance(right));
    }
}

TEST_CASE("blending keeps every channel inside the unit interval") {
    std::mt19937_64 rng(106);
    const auto R = noisy_constant(12, 12, 0.9f, 0.2, rng);
    std::vector<float> illum(R.pixel_count());
    for (auto& v : illum) v = static_cast<float>(rand_uniform(rng));
    const auto out = denoise_reflectance(R, illum, small_cfg());
    for (const float v : out.pixels) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
}

TEST_CASE("darker illumination never weakens the filtering") {
    std::mt19937_64 rng(107);
    const auto R = noisy_constant(10, 10, 0.5f, 0.05, rng);
    DenoiseConfig cfg = small_cfg();
    const std::vector<float> darker(R.pixel_count(), 0.3f);
    const std::vector<float> brighter(R.pixel_count(), 0.7f);
    const auto out_dark = denoise_reflectance(R, darker, cfg);
    const auto out_bright = denoise_reflectance(R, brighter, cfg);
    for (std::size_t i = 0; i < R.pixels.size(); ++i) {
        const float move_dark = std::abs(out_dark.pixels[i] - R.pixels[i]);
        const float move_bright = std::abs(out_bright.pixels[i] - R.pixels[i]);
        CHECK(move_dark >= move_bright - 1e-6f);
    }
}

TEST_CASE("exponent zero forces full filtering regardless of illumination") {
    std::mt19937_64 rng(108);
    const auto R = noisy_constant(8, 8, 0.5f, 0.05, rng);
    DenoiseConfig cfg = small_cfg();
    cfg.illumination_exponent = 0.0f;
    const std::vector<float> bright(R.pixel_count(), 1.0f);
    const auto out = denoise_reflectance(R, bright, cfg);
    const auto full = base_denoiser(R, cfg.base_strength, cfg);
    for (std::size_t i = 0; i < R.pixels.size(); ++i) CHECK(out.pixels[i] == full.pixels[i]);
}

TEST_CASE("invalid configurations and inputs are rejected") {
    std::mt19937_64 rng(109);
    const auto R = random_image(6, 6, rng);
    const std::vector<float> illum(R.pixel_count(), 0.5f);

    DenoiseConfig cfg = small_cfg();
    cfg.window = 0;
    CHECK_THROWS_AS(base_denoiser(R, 0.1f, cfg), ConfigError);

    cfg = small_cfg();
    cfg.search = 0;
    CHECK_THROWS_AS(denoise_reflectance(R, illum, cfg), ConfigError);

    cfg = small_cfg();
    cfg.base_strength = -0.1f;
    CHECK_THROWS_AS(denoise_reflectance(R, illum, cfg), ConfigError);

    cfg = small_cfg();
    cfg.illumination_exponent = -1.0f;
    CHECK_THROWS_AS(denoise_reflectance(R, illum, cfg), ConfigError);

    CHECK_THROWS_AS(base_denoiser(R, -0.5f, small_cfg()), ConfigError);

    const std::vector<float> short_map(R.pixel_count() - 1, 0.5f);
    CHECK_THROWS_AS(denoise_reflectance(R, short_map, small_cfg()), ShapeError);

    std::vector<float> bad_values(R.pixel_count(), 0.5f);
    bad_values[3] = 1.5f;
    CHECK_THROWS_AS(denoise_reflectance(R, bad_values, small_cfg()), NumericError);
}
