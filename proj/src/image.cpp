#include "retinex/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "retinex/errors.hpp"
#include "retinex/random.hpp"

namespace retinex {

ImageRGB make_image(int width, int height, float fill) {
    if (width < 1 || height < 1)
        throw ShapeError("make_image: extents must be positive, got " + std::to_string(width) +
                         "x" + std::to_string(height));
    ImageRGB img;
    img.width = width;
    img.height = height;
    img.pixels.assign(static_cast<std::size_t>(width) * height * 3, fill);
    return img;
}

// ---------------------------------------------------------------------------
// PNG I/O
// ---------------------------------------------------------------------------

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

ImageRGB read_png(const std::string& path) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) throw IoError("cannot open image " + path);
    unsigned char header[8];
    if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
        throw IoError(path + " is not a PNG file");

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("png reader allocation failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("malformed PNG file " + path);
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);

    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth == 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(path + ": 16-bit PNGs are not supported");
    }
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)
        png_set_gray_to_rgb(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    const int width = static_cast<int>(png_get_image_width(png, info));
    const int height = static_cast<int>(png_get_image_height(png, info));
    if (png_get_rowbytes(png, info) != static_cast<std::size_t>(width) * 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(path + ": unexpected row layout after RGB conversion");
    }

    ImageRGB img = make_image(width, height);
    std::vector<unsigned char> row(static_cast<std::size_t>(width) * 3);
    for (int y = 0; y < height; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (std::size_t i = 0; i < row.size(); ++i)
            img.pixels[static_cast<std::size_t>(y) * width * 3 + i] =
                static_cast<float>(row[i]) / 255.0f;
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

void write_png(const std::string& path, const ImageRGB& img) {
    if (img.width < 1 || img.height < 1) throw ShapeError("write_png: empty image");
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) throw IoError("cannot open " + path + " for writing");

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("png writer allocation failed for " + path);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("failed writing PNG file " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                // round half-up onto the 8-bit scale
                const float v = std::clamp(img.at(y, x, c), 0.0f, 1.0f);
                row[static_cast<std::size_t>(x) * 3 + c] =
                    static_cast<unsigned char>(std::floor(v * 255.0f + 0.5f));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// Color conversion (BT.601 studio range, RGB in [0,1])
// ---------------------------------------------------------------------------

ImageYCbCr rgb_to_ycbcr(const ImageRGB& img) {
    ImageYCbCr out;
    out.width = img.width;
    out.height = img.height;
    const std::size_t n = img.pixel_count();
    out.y.resize(n);
    out.cb.resize(n);
    out.cr.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float r = img.pixels[i * 3], g = img.pixels[i * 3 + 1], b = img.pixels[i * 3 + 2];
        out.y[i] = 16.0f + 65.481f * r + 128.553f * g + 24.966f * b;
        out.cb[i] = 128.0f - 37.797f * r - 74.203f * g + 112.0f * b;
        out.cr[i] = 128.0f + 112.0f * r - 93.786f * g - 18.214f * b;
    }
    return out;
}

ImageRGB ycbcr_to_rgb(const ImageYCbCr& img) {
    ImageRGB out = make_image(img.width, img.height);
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        const float y = img.y[i] - 16.0f, cb = img.cb[i] - 128.0f, cr = img.cr[i] - 128.0f;
        const float r = 0.00456621f * y + 0.00625893f * cr;
        const float g = 0.00456621f * y - 0.00153632f * cb - 0.00318811f * cr;
        const float b = 0.00456621f * y + 0.00791071f * cb;
        out.pixels[i * 3] = std::clamp(r, 0.0f, 1.0f);
        out.pixels[i * 3 + 1] = std::clamp(g, 0.0f, 1.0f);
        out.pixels[i * 3 + 2] = std::clamp(b, 0.0f, 1.0f);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Luma histograms
// ---------------------------------------------------------------------------

void YHistogram::add(const ImageRGB& img) {
    const ImageYCbCr conv = rgb_to_ycbcr(img);
    for (float y : conv.y) {
        int bin = static_cast<int>(std::floor(y)) - kFirstBin;
        bin = std::clamp(bin, 0, kBins - 1);
        ++bins[static_cast<std::size_t>(bin)];
        ++total;
    }
}

double YHistogram::mean_y() const {
    if (total == 0) return 0.0;
    double acc = 0;
    for (int i = 0; i < kBins; ++i)
        acc += static_cast<double>(bins[static_cast<std::size_t>(i)]) * (kFirstBin + i);
    return acc / static_cast<double>(total);
}

YHistogram y_histogram(const std::vector<ImageRGB>& images) {
    if (images.empty()) throw IoError("y_histogram: no images given");
    YHistogram hist;
    for (const auto& img : images) hist.add(img);
    return hist;
}

void write_histogram_csv(const YHistogram& hist, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "bin_center,count,log10_count\n";
    for (int i = 0; i < YHistogram::kBins; ++i) {
        const std::int64_t count = hist.bins[static_cast<std::size_t>(i)];
        const double log_count = count > 0 ? std::log10(static_cast<double>(count)) : 0.0;
        char line[96];
        std::snprintf(line, sizeof line, "%d,%lld,%.6g\n", YHistogram::kFirstBin + i,
                      static_cast<long long>(count), log_count);
        out << line;
    }
    if (!out) throw IoError("failed writing " + path);
}

YHistogram read_histogram_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open histogram file " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("bin_center,count", 0) != 0)
        throw IoError(path + ": missing histogram CSV header");
    YHistogram hist;
    int rows = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        long long center, count;
        if (std::sscanf(line.c_str(), "%lld,%lld", &center, &count) != 2)
            throw IoError(path + ": malformed histogram row '" + line + "'");
        const long long bin = center - YHistogram::kFirstBin;
        if (bin < 0 || bin >= YHistogram::kBins)
            throw IoError(path + ": bin center " + std::to_string(center) + " out of range");
        if (count < 0) throw IoError(path + ": negative count in row '" + line + "'");
        hist.bins[static_cast<std::size_t>(bin)] += count;
        hist.total += count;
        ++rows;
    }
    if (rows == 0) throw IoError(path + ": histogram CSV has no data rows");
    return hist;
}

double histogram_distance(const YHistogram& a, const YHistogram& b) {
    if (a.total == 0 || b.total == 0)
        throw IoError("histogram_distance: empty histogram");
    double acc = 0;
    for (int i = 0; i < YHistogram::kBins; ++i) {
        const double pa =
            static_cast<double>(a.bins[static_cast<std::size_t>(i)]) / static_cast<double>(a.total);
        const double pb =
            static_cast<double>(b.bins[static_cast<std::size_t>(i)]) / static_cast<double>(b.total);
        acc += std::abs(pa - pb);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Synthetic darkening
// ---------------------------------------------------------------------------

namespace {

void require_valid(const DarkeningParams& p) {
    if (!(p.gamma >= 1.0))
        throw ConfigError("darkening gamma must be >= 1, got " + std::to_string(p.gamma));
    if (!(p.beta > 0.0 && p.beta <= 1.0))
        throw ConfigError("darkening beta must be in (0,1], got " + std::to_string(p.beta));
    if (!(p.noise_sigma >= 0.0 && p.noise_sigma <= 1.0))
        throw ConfigError("darkening noise_sigma must be in [0,1], got " +
                          std::to_string(p.noise_sigma));
}

}  // namespace

ImageRGB synth_low_light(const ImageRGB& img, const DarkeningParams& p, std::mt19937_64& rng) {
    require_valid(p);
    ImageRGB out = make_image(img.width, img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        double v = p.beta * std::pow(static_cast<double>(img.pixels[i]), p.gamma);
        if (p.noise_sigma > 0.0) v += p.noise_sigma * rand_normal(rng);
        out.pixels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return out;
}

DarkeningFit fit_darkening_params(const std::vector<ImageRGB>& normal_images,
                                  const YHistogram& target, double noise_sigma) {
    if (normal_images.empty()) throw IoError("fit_darkening_params: no images given");
    if (target.total == 0) throw IoError("fit_darkening_params: empty target histogram");

    // Every candidate reuses the same seed so all of them see an identical
    // noise stream; the search is then a pure function of its inputs.
    constexpr std::uint64_t kFitSeed = 0x51d7a5;
    DarkeningFit best;
    bool have_best = false;
    for (int gi = 0; gi <= 16; ++gi) {
        const double gamma = 1.0 + 0.25 * gi;
        for (int bi = 20; bi >= 1; --bi) {
            const double beta = 0.05 * bi;
            DarkeningParams p{gamma, beta, noise_sigma};
            std::mt19937_64 rng(kFitSeed);
            YHistogram hist;
            for (const auto& img : normal_images) hist.add(synth_low_light(img, p, rng));
            const double d = histogram_distance(hist, target);
            if (!have_best || d < best.distance) {
                best.params = p;
                best.distance = d;
                have_best = true;
            }
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Tensor bridges
// ---------------------------------------------------------------------------

TensorFPtr image_to_tensor(const ImageRGB& img) {
    auto t = TensorF::create({1, 3, img.height, img.width});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) t->at(0, c, y, x) = img.at(y, x, c);
    return t;
}

ImageRGB tensor_to_image(const TensorFPtr& t, int batch_index) {
    if (!t || t->rank() != 4 || t->channels() != 3)
        throw ShapeError("tensor_to_image: expected a [B,3,H,W] tensor");
    ImageRGB img = make_image(t->width(), t->height());
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < t->height(); ++y)
            for (int x = 0; x < t->width(); ++x)
                img.at(y, x, c) = std::clamp(t->at(batch_index, c, y, x), 0.0f, 1.0f);
    return img;
}

ImageRGB gray_tensor_to_image(const TensorFPtr& t, int batch_index) {
    if (!t || t->rank() != 4 || t->channels() != 1)
        throw ShapeError("gray_tensor_to_image: expected a [B,1,H,W] tensor");
    ImageRGB img = make_image(t->width(), t->height());
    for (int y = 0; y < t->height(); ++y)
        for (int x = 0; x < t->width(); ++x) {
            const float v = std::clamp(t->at(batch_index, 0, y, x), 0.0f, 1.0f);
            img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = v;
        }
    return img;
}

}  // namespace retinex
