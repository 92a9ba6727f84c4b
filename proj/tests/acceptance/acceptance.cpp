// End-to-end acceptance checks for the enhancement pipeline. Each criterion
// prints exactly one [PASS]/[FAIL] line with its measured numbers; the
// process exits nonzero if any criterion fails. Criteria 6, 7, and 10 reuse
// the desk-scale training run performed by criterion 5.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "retinex/dataset.hpp"
#include "retinex/denoise.hpp"
#include "retinex/image.hpp"
#include "retinex/losses.hpp"
#include "retinex/model.hpp"
#include "retinex/pipeline.hpp"
#include "retinex/random.hpp"
#include "retinex/tensor.hpp"
#include "retinex/training.hpp"

using namespace retinex;
namespace fs = std::filesystem;

namespace {

using TensorD = Tensor<double>;
using TensorDPtr = TensorPtr<double>;
using WeightsD = LossWeightsT<double>;

struct Stopwatch {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

std::string fmt(const char* format, ...) {
    va_list args;
    va_start(args, format);
    char buf[512];
    std::vsnprintf(buf, sizeof buf, format, args);
    va_end(args);
    return buf;
}

int failures = 0;

void run_criterion(int index, const char* name,
                   const std::function<std::pair<bool, std::string>()>& body) {
    bool ok = false;
    std::string detail;
    try {
        auto result = body();
        ok = result.first;
        detail = std::move(result.second);
    } catch (const std::exception& e) {
        detail = std::string("exception: ") + e.what();
    }
    if (!ok) ++failures;
    std::printf("[%s] criterion %d, %s: %s\n", ok ? "PASS" : "FAIL", index, name, detail.c_str());
    std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// Random tensors for gradient checks
// ---------------------------------------------------------------------------

TensorDPtr uniform_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo, double hi,
                          bool requires_grad = false) {
    auto t = TensorD::create(std::move(shape), requires_grad);
    for (auto& v : t->values) v = rand_uniform(rng, lo, hi);
    return t;
}

// Each spatial plane is a shuffled set of evenly spaced levels, so every
// pairwise difference stays at least (hi-lo)/(plane-1). That keeps the
// central-difference probes (eps 1e-4) safely away from the |.| kinks of the
// losses under test.
TensorDPtr separated_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo, double hi,
                            bool requires_grad = false) {
    auto t = TensorD::create(std::move(shape), requires_grad);
    const std::int64_t plane = static_cast<std::int64_t>(t->height()) * t->width();
    if ((hi - lo) / static_cast<double>(plane - 1) <= 2e-3)
        throw std::logic_error("separated_tensor: level spacing too small for finite differences");
    std::vector<double> levels(static_cast<std::size_t>(plane));
    for (std::int64_t i = 0; i < plane; ++i)
        levels[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(plane - 1);
    for (int b = 0; b < t->batch(); ++b)
        for (int c = 0; c < t->channels(); ++c) {
            for (std::int64_t i = plane - 1; i > 0; --i)
                std::swap(levels[i], levels[rng() % static_cast<std::uint64_t>(i + 1)]);
            std::copy(levels.begin(), levels.end(),
                      t->values.begin() + (static_cast<std::int64_t>(b) * t->channels() + c) * plane);
        }
    return t;
}

double max_rel_error(const std::vector<double>& got, const std::vector<double>& want) {
    double worst = 0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        const double scale = std::max({1e-8, std::abs(got[i]), std::abs(want[i])});
        worst = std::max(worst, std::abs(got[i] - want[i]) / scale);
    }
    return worst;
}

// Value ranges keep every |.| argument bounded away from zero: the products
// R o I sit above the S range and the two reflectance bands are disjoint.
struct DecomInputs {
    TensorDPtr R_low, I_low, R_normal, I_normal, S_low, S_normal;
};

DecomInputs random_decom_inputs(std::mt19937_64& rng, int h, int w) {
    DecomInputs in;
    in.R_low = separated_tensor({1, 3, h, w}, rng, 0.55, 0.70, true);
    in.R_normal = separated_tensor({1, 3, h, w}, rng, 0.75, 0.95, true);
    in.I_low = separated_tensor({1, 1, h, w}, rng, 0.55, 0.95, true);
    in.I_normal = separated_tensor({1, 1, h, w}, rng, 0.55, 0.95, true);
    in.S_low = uniform_tensor({1, 3, h, w}, rng, 0.05, 0.25, true);
    in.S_normal = uniform_tensor({1, 3, h, w}, rng, 0.05, 0.25, true);
    return in;
}

oracle::Image to_oracle(const TensorDPtr& t, int batch_index) {
    oracle::Image img = oracle::make_image(t->channels(), t->height(), t->width());
    for (int c = 0; c < t->channels(); ++c)
        for (int y = 0; y < t->height(); ++y)
            for (int x = 0; x < t->width(); ++x) img.at(c, y, x) = t->at(batch_index, c, y, x);
    return img;
}

// ---------------------------------------------------------------------------
// Desk-scale synthetic dataset and training run
// ---------------------------------------------------------------------------

// Piecewise-flat scene: a horizontal luminance ramp with overlaid colored
// rectangles, the same generator family the unit suites use.
ImageRGB scene(int w, int h, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    ImageRGB img = make_image(w, h);
    float base[3];
    for (auto& b : base) b = static_cast<float>(rand_uniform(rng, 0.3, 0.8));
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = base[c] * (0.6f + 0.4f * static_cast<float>(x) / static_cast<float>(w));
    for (int r = 0; r < 6; ++r) {
        const int x0 = static_cast<int>(rand_uniform(rng) * w * 0.8);
        const int y0 = static_cast<int>(rand_uniform(rng) * h * 0.8);
        const int rw = 3 + static_cast<int>(rand_uniform(rng) * w * 0.4);
        const int rh = 3 + static_cast<int>(rand_uniform(rng) * h * 0.4);
        float col[3];
        for (auto& c : col) c = static_cast<float>(rand_uniform(rng));
        for (int y = y0; y < std::min(h, y0 + rh); ++y)
            for (int x = x0; x < std::min(w, x0 + rw); ++x)
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.15f + 0.8f * col[c];
    }
    return img;
}

// Paired exposures: pure exposure scaling (gamma 1) with per-pair strength
// and mild sensor noise, so the low and normal sides share their chroma.
PairDataset build_pairs(int count, std::uint64_t seed) {
    PairDataset ds;
    ds.split = Split::train;
    std::mt19937_64 rng(seed);
    for (int i = 0; i < count; ++i) {
        ImagePair p;
        p.normal = scene(48, 48, seed + 100 + static_cast<std::uint64_t>(i));
        DarkeningParams dp{1.0, rand_uniform(rng, 0.3, 0.5), 0.005};
        p.low = synth_low_light(p.normal, dp, rng);
        p.id = "pair" + std::to_string(i);
        ds.pairs.push_back(std::move(p));
    }
    return ds;
}

constexpr int kTrainPairs = 16;
constexpr int kHeldOutPairs = 8;
constexpr std::uint64_t kTrainDataSeed = 40;
constexpr std::uint64_t kHeldOutDataSeed = 900;
constexpr std::uint64_t kWeightSeed = 1;

TrainConfig desk_config(TrainPhase phase) {
    TrainConfig cfg;
    cfg.phase = phase;
    cfg.batch = 4;
    cfg.patch = 48;
    cfg.lr_decay = 1.0;
    cfg.momentum = 0.9;
    cfg.finetune_lr_scale = 1.0;
    cfg.seed = 5;
    cfg.checkpoint_every = 1000000;
    cfg.loss_weights.lambda_ij[0][1] = 0.5f;
    cfg.loss_weights.lambda_ij[1][0] = 0.5f;
    cfg.loss_weights.lambda_ir = 0.2f;
    switch (phase) {
        case TrainPhase::decom:
            cfg.iterations = 2000;
            cfg.learning_rate = 0.002;
            break;
        case TrainPhase::enhance:
            cfg.iterations = 2000;
            cfg.learning_rate = 0.004;
            break;
        case TrainPhase::finetune:
            cfg.iterations = 1000;
            cfg.learning_rate = 0.016;
            break;
    }
    return cfg;
}

struct TrainArtifacts {
    bool ok = false;
    WeightStore weights;
    TrainLog logs[3];
};

TrainArtifacts run_desk_training() {
    TrainArtifacts art;
    PairDataset ds = build_pairs(kTrainPairs, kTrainDataSeed);
    art.weights = init_weights(DecomNetConfig{5, 16, 3}, EnhanceNetConfig{3, 16}, kWeightSeed);
    art.logs[0] = train_decom(desk_config(TrainPhase::decom), ds, art.weights);
    art.logs[1] = train_enhance(desk_config(TrainPhase::enhance), ds, art.weights);
    art.logs[2] = finetune_end_to_end(desk_config(TrainPhase::finetune), ds, art.weights);
    art.ok = true;
    return art;
}

double mean_total(const TrainLog& log, std::size_t first, std::size_t count) {
    double acc = 0;
    for (std::size_t i = first; i < first + count; ++i) acc += log.rows[i].total;
    return acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Small shared helpers
// ---------------------------------------------------------------------------

ImageRGB random_image(int width, int height, std::mt19937_64& rng) {
    ImageRGB img = make_image(width, height);
    for (auto& v : img.pixels) v = static_cast<float>(rand_uniform(rng));
    return img;
}

ImageRGB noisy_constant(int width, int height, float level, double sigma, std::mt19937_64& rng) {
    ImageRGB img = make_image(width, height);
    for (auto& v : img.pixels) {
        const double noisy = level + sigma * rand_normal(rng);
        v = static_cast<float>(std::min(1.0, std::max(0.0, noisy)));
    }
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

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path scratch_dir() {
    const fs::path dir = fs::temp_directory_path() / "retinex_acceptance_scratch";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

namespace {

// Criterion 1: reverse-mode gradients of every loss match central finite
// differences in double precision on randomized inputs.
std::pair<bool, std::string> check_loss_gradients() {
    Stopwatch clock;
    const WeightsD lw;
    double worst = 0;
    int checks = 0;
    struct Case {
        const char* name;
        std::function<TensorDPtr(const DecomInputs&)> f;
    };
    const Case cases[] = {
        {"reconstruction",
         [&](const DecomInputs& d) {
             return recon_loss(d.R_low, d.I_low, d.R_normal, d.I_normal, d.S_low, d.S_normal, lw);
         }},
        {"reflectance consistency",
         [&](const DecomInputs& d) { return invariable_reflectance_loss(d.R_low, d.R_normal); }},
        {"smoothness",
         [&](const DecomInputs& d) { return smoothness_loss(d.I_low, d.R_low, lw.lambda_g); }},
        {"decomposition total",
         [&](const DecomInputs& d) {
             return decom_total_loss(d.R_low, d.I_low, d.R_normal, d.I_normal, d.S_low, d.S_normal,
                                     lw)
                 .total;
         }},
        {"adjustment",
         [&](const DecomInputs& d) { return enhance_loss(d.R_low, d.I_low, d.S_normal, lw).total; }},
    };
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
        std::mt19937_64 rng(seed);
        auto in = random_decom_inputs(rng, 8, 8);
        TensorDPtr* args[] = {&in.R_low, &in.I_low, &in.R_normal,
                              &in.I_normal, &in.S_low, &in.S_normal};
        for (const auto& c : cases) {
            for (auto* a : args) (*a)->zero_grad();
            backprop(c.f(in));
            for (auto* arg : args) {
                TensorDPtr& t = *arg;
                if (t->grad.empty()) continue;  // argument not used by this loss
                auto fd = finite_difference_gradient<double>(
                    [&](const TensorDPtr& p) {
                        DecomInputs probe;
                        probe.R_low = (arg == &in.R_low) ? p : in.R_low;
                        probe.I_low = (arg == &in.I_low) ? p : in.I_low;
                        probe.R_normal = (arg == &in.R_normal) ? p : in.R_normal;
                        probe.I_normal = (arg == &in.I_normal) ? p : in.I_normal;
                        probe.S_low = (arg == &in.S_low) ? p : in.S_low;
                        probe.S_normal = (arg == &in.S_normal) ? p : in.S_normal;
                        return scalar_value(c.f(probe));
                    },
                    t, 1e-4);
                worst = std::max(worst, max_rel_error(t->grad, fd));
                ++checks;
            }
        }
    }
    const double elapsed = clock.seconds();
    const bool ok = worst <= 1e-3 && elapsed < 60.0;
    return {ok, fmt("max rel error %.3g over %d argument checks (bound 1e-3), %.1f s (bound 60 s)",
                    worst, checks, elapsed)};
}

// Criterion 2: the convolution and resize used by the networks agree with
// literal nested-loop references in double precision.
std::pair<bool, std::string> check_op_oracles() {
    Stopwatch clock;
    std::mt19937_64 rng(7);
    double worst_conv = 0;
    for (int tc = 0; tc < 100; ++tc) {
        const int B = 1 + static_cast<int>(rand_index(rng, 2));
        const int Cin = 1 + static_cast<int>(rand_index(rng, 3));
        const int Cout = 1 + static_cast<int>(rand_index(rng, 3));
        const int k = rand_index(rng, 2) ? 3 : 1;
        const int s = rand_index(rng, 2) ? 2 : 1;
        const int H = 1 + static_cast<int>(rand_index(rng, 8));
        const int W = 1 + static_cast<int>(rand_index(rng, 8));
        auto input = uniform_tensor({B, Cin, H, W}, rng, -1.0, 1.0);
        auto weights = uniform_tensor({Cout, Cin, k, k}, rng, -1.0, 1.0);
        auto bias = uniform_tensor({Cout}, rng, -1.0, 1.0);
        auto out = conv2d(input, weights, bias, conv_spec(Cin, Cout, k, s));
        const std::vector<double> wv(weights->values.begin(), weights->values.end());
        const std::vector<double> bv(bias->values.begin(), bias->values.end());
        for (int b = 0; b < B; ++b) {
            const oracle::Image ref =
                oracle::conv2d(to_oracle(input, b), wv, bv, Cout, k, s, (k - 1) / 2);
            for (int c = 0; c < Cout; ++c)
                for (int y = 0; y < out->height(); ++y)
                    for (int x = 0; x < out->width(); ++x)
                        worst_conv =
                            std::max(worst_conv, std::abs(out->at(b, c, y, x) - ref.at(c, y, x)));
        }
    }
    double worst_resize = 0;
    for (int tc = 0; tc < 100; ++tc) {
        const int C = 1 + static_cast<int>(rand_index(rng, 3));
        const int H = 1 + static_cast<int>(rand_index(rng, 10));
        const int W = 1 + static_cast<int>(rand_index(rng, 10));
        const int th = 1 + static_cast<int>(rand_index(rng, 12));
        const int tw = 1 + static_cast<int>(rand_index(rng, 12));
        auto input = uniform_tensor({1, C, H, W}, rng, -1.0, 1.0);
        auto out = resize_nearest(input, th, tw);
        const oracle::Image ref = oracle::resize_nearest(to_oracle(input, 0), th, tw);
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < th; ++y)
                for (int x = 0; x < tw; ++x)
                    worst_resize =
                        std::max(worst_resize, std::abs(out->at(0, c, y, x) - ref.at(c, y, x)));
    }
    const double elapsed = clock.seconds();
    const bool ok = worst_conv <= 1e-10 && worst_resize <= 1e-10 && elapsed < 30.0;
    return {ok, fmt("conv max diff %.3g, resize max diff %.3g (bound 1e-10), %.1f s (bound 30 s)",
                    worst_conv, worst_resize, elapsed)};
}

// Criterion 3: the exact identities of the losses. Perfect recompositions,
// equal reflectances, and constant illumination all yield zero; the edge
// attenuation weight is one on flat reflectance and never exceeds one.
std::pair<bool, std::string> check_loss_identities() {
    std::mt19937_64 rng(31);
    double worst = 0;

    auto R = uniform_tensor({1, 3, 6, 6}, rng, 0.2, 0.8);
    auto I_low = uniform_tensor({1, 1, 6, 6}, rng, 0.1, 0.4);
    auto I_normal = uniform_tensor({1, 1, 6, 6}, rng, 0.6, 0.9);
    TensorDPtr S_low, S_normal;
    {
        NoGradGuard no_grad;
        S_low = mul(R, I_low);
        S_normal = mul(R, I_normal);
    }
    worst = std::max(worst,
                     std::abs(scalar_value(recon_loss(R, I_low, R, I_normal, S_low, S_normal,
                                                      WeightsD{}))));

    worst = std::max(worst, std::abs(scalar_value(invariable_reflectance_loss(R, R))));

    auto I_const = TensorD::full({1, 1, 6, 6}, 0.4);
    auto R_rand = uniform_tensor({1, 3, 6, 6}, rng, 0.1, 0.9);
    worst = std::max(worst, std::abs(scalar_value(smoothness_loss(I_const, R_rand, 10.0))));

    // Reflectance flat except a single vertical step: the weight must be
    // exactly one off the edge and never above one anywhere.
    auto R_step = TensorD::create({1, 3, 6, 6});
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) R_step->at(0, c, y, x) = x < 3 ? 0.3 : 0.7;
    auto w_h = smoothness_weight(R_step, 10.0, GradientAxis::horizontal);
    auto w_v = smoothness_weight(R_step, 10.0, GradientAxis::vertical);
    double max_weight = 0;
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) {
            const double wh = w_h->at(0, 0, y, x);
            const double wv = w_v->at(0, 0, y, x);
            max_weight = std::max({max_weight, wh, wv});
            if (x != 2) worst = std::max(worst, std::abs(wh - 1.0));  // flat: weight exactly 1
            worst = std::max(worst, std::abs(wv - 1.0));
        }
    const double expected_edge = std::exp(-10.0 * (0.7 - 0.3));
    for (int y = 0; y < 6; ++y)
        worst = std::max(worst, std::abs(w_h->at(0, 0, y, 2) - expected_edge));
    worst = std::max(worst, std::max(0.0, max_weight - 1.0));

    const bool ok = worst <= 1e-12;
    return {ok, fmt("max deviation %.3g (bound 1e-12)", worst)};
}

// Criterion 4: structure awareness. On a shared step edge the attenuated
// smoothness is below the unattenuated one by exactly exp(-lambda_g * step).
std::pair<bool, std::string> check_structure_awareness() {
    const double a = 0.2, b = 0.8;
    const double step = b - a;
    auto R = TensorD::create({1, 3, 6, 8});
    auto I = TensorD::create({1, 1, 6, 8});
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 8; ++x) {
            for (int c = 0; c < 3; ++c) R->at(0, c, y, x) = x < 4 ? a : b;
            I->at(0, 0, y, x) = x < 4 ? a : b;
        }
    const double attenuated = scalar_value(smoothness_loss(I, R, 10.0));
    const double plain = scalar_value(smoothness_loss(I, R, 0.0));
    const double ratio = attenuated / plain;
    const double expected = std::exp(-10.0 * step);
    const bool ok = attenuated < plain && std::abs(ratio - expected) <= 1e-12;
    return {ok, fmt("attenuated %.6g < plain %.6g, ratio %.12g vs exp(-10*step) %.12g", attenuated,
                    plain, ratio, expected)};
}

// Criterion 5: desk-scale training. Every phase must end with its final
// 100-iteration loss mean at or below half of its initial 100-iteration mean.
std::pair<bool, std::string> check_training_convergence(TrainArtifacts& art) {
    Stopwatch clock;
    art = run_desk_training();
    std::string detail;
    bool ok = true;
    const char* names[3] = {"decom", "enhance", "finetune"};
    for (int p = 0; p < 3; ++p) {
        const TrainLog& log = art.logs[p];
        const double first = mean_total(log, 0, 100);
        const double last = mean_total(log, log.rows.size() - 100, 100);
        const double ratio = last / first;
        ok = ok && ratio <= 0.5;
        detail += fmt("%s %.4f->%.4f (ratio %.3f), ", names[p], first, last, ratio);
    }
    const double elapsed = clock.seconds();
    ok = ok && elapsed < 900.0;
    detail += fmt("%.0f s (bound 900 s)", elapsed);
    return {ok, detail};
}

// Criterion 6: held-out fidelity. Enhancement must add at least 3 dB PSNR
// over the unenhanced input and not lose SSIM, both averaged over fresh
// pairs drawn from the training distribution.
std::pair<bool, std::string> check_held_out_fidelity(const TrainArtifacts& art) {
    if (!art.ok) return {false, "training artifacts unavailable"};
    PairDataset held = build_pairs(kHeldOutPairs, kHeldOutDataSeed);
    double psnr_in = 0, psnr_out = 0, ssim_in = 0, ssim_out = 0;
    for (const ImagePair& p : held.pairs) {
        const EnhanceResult res = enhance_image(p.low, art.weights, std::nullopt);
        psnr_in += psnr(p.low, p.normal);
        psnr_out += psnr(res.S_hat, p.normal);
        ssim_in += ssim(p.low, p.normal);
        ssim_out += ssim(res.S_hat, p.normal);
    }
    const double n = kHeldOutPairs;
    psnr_in /= n, psnr_out /= n, ssim_in /= n, ssim_out /= n;
    const double gain = psnr_out - psnr_in;
    const bool ok = gain >= 3.0 && ssim_out > ssim_in;
    return {ok, fmt("PSNR %.2f -> %.2f dB (gain %.2f, bound 3.00), SSIM %.4f -> %.4f", psnr_in,
                    psnr_out, gain, ssim_in, ssim_out)};
}

// Criterion 7: the decomposition extracts a representation that varies less
// across exposures than the images themselves do.
std::pair<bool, std::string> check_reflectance_invariance(const TrainArtifacts& art) {
    if (!art.ok) return {false, "training artifacts unavailable"};
    PairDataset held = build_pairs(kHeldOutPairs, kHeldOutDataSeed);
    double r_diff = 0, s_diff = 0;
    std::size_t count = 0;
    EnhanceOptions bypass;
    bypass.bypass_adjustment = true;
    for (const ImagePair& p : held.pairs) {
        const EnhanceResult low = enhance_image(p.low, art.weights, std::nullopt, bypass);
        const EnhanceResult normal = enhance_image(p.normal, art.weights, std::nullopt, bypass);
        for (std::size_t i = 0; i < p.low.pixels.size(); ++i) {
            r_diff += std::abs(static_cast<double>(low.R.pixels[i]) - normal.R.pixels[i]);
            s_diff += std::abs(static_cast<double>(p.low.pixels[i]) - p.normal.pixels[i]);
        }
        count += p.low.pixels.size();
    }
    r_diff /= static_cast<double>(count);
    s_diff /= static_cast<double>(count);
    const bool ok = r_diff < s_diff;
    return {ok, fmt("mean|R_low - R_normal| %.4f < mean|S_low - S_normal| %.4f", r_diff, s_diff)};
}

// Criterion 8: the denoiser's limit contracts hold bit for bit, and over 20
// noise seeds the dark half of a bipartite illumination always keeps less
// residual variance than the bright half.
std::pair<bool, std::string> check_denoise_contract() {
    DenoiseConfig cfg;
    cfg.window = 2;
    cfg.search = 3;

    std::mt19937_64 rng(104);
    const ImageRGB R = random_image(8, 8, rng);

    const std::vector<float> bright(R.pixel_count(), 1.0f);
    const ImageRGB passed = denoise_reflectance(R, bright, cfg);
    bool pass_through = passed.pixels.size() == R.pixels.size();
    for (std::size_t i = 0; pass_through && i < R.pixels.size(); ++i)
        pass_through = passed.pixels[i] == R.pixels[i];

    DenoiseConfig strong = cfg;
    strong.base_strength = 0.15f;
    const std::vector<float> dark(R.pixel_count(), 0.0f);
    const ImageRGB blended = denoise_reflectance(R, dark, strong);
    const ImageRGB full = base_denoiser(R, strong.base_strength, strong);
    bool full_strength = blended.pixels.size() == full.pixels.size();
    for (std::size_t i = 0; full_strength && i < full.pixels.size(); ++i)
        full_strength = blended.pixels[i] == full.pixels[i];

    int ordered = 0;
    const int seeds = 20;
    for (int s = 0; s < seeds; ++s) {
        std::mt19937_64 noise_rng(300 + static_cast<std::uint64_t>(s));
        const int w = 16, h = 16;
        const ImageRGB noisy = noisy_constant(w, h, 0.5f, 0.04, noise_rng);
        std::vector<float> illum(static_cast<std::size_t>(w) * h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                illum[static_cast<std::size_t>(y) * w + x] = x < w / 2 ? 0.1f : 0.9f;
        DenoiseConfig bi = cfg;
        bi.base_strength = 0.1f;
        const ImageRGB out = denoise_reflectance(noisy, illum, bi);
        std::vector<float> left, right;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) (x < w / 2 ? left : right).push_back(out.at(y, x, c));
        if (variance(left) < variance(right)) ++ordered;
    }

    const bool ok = pass_through && full_strength && ordered == seeds;
    return {ok, fmt("full illumination pass-through %s, zero illumination full strength %s, "
                    "variance ordering %d/%d seeds",
                    pass_through ? "exact" : "BROKEN", full_strength ? "exact" : "BROKEN", ordered,
                    seeds)};
}

// Criterion 9: data pipeline. Histogram fitting recovers planted on-grid
// darkening parameters, PNG and weight files round-trip, and a 500-pair
// directory splits 485/15.
std::pair<bool, std::string> check_data_pipeline() {
    const fs::path dir = scratch_dir();

    std::vector<ImageRGB> normals;
    for (int i = 0; i < 6; ++i) normals.push_back(scene(32, 32, 700 + static_cast<std::uint64_t>(i)));
    std::mt19937_64 rng(701);
    const DarkeningParams planted{2.25, 0.35, 0.0};
    std::vector<ImageRGB> darkened;
    for (const auto& img : normals) darkened.push_back(synth_low_light(img, planted, rng));
    const DarkeningFit fit = fit_darkening_params(normals, y_histogram(darkened), 0.0);
    const bool fit_ok = std::abs(fit.params.gamma - planted.gamma) < 1e-9 &&
                        std::abs(fit.params.beta - planted.beta) < 1e-9;

    const ImageRGB original = random_image(9, 7, rng);
    const fs::path png_path = dir / "roundtrip.png";
    write_png(png_path.string(), original);
    const ImageRGB reread = read_png(png_path.string());
    double png_err = 0;
    for (std::size_t i = 0; i < original.pixels.size(); ++i)
        png_err = std::max(png_err,
                           std::abs(static_cast<double>(original.pixels[i]) - reread.pixels[i]));
    const bool png_ok = reread.width == original.width && reread.height == original.height &&
                        png_err <= 1.0 / 255.0;

    const WeightStore saved = init_weights(DecomNetConfig{5, 8, 3}, EnhanceNetConfig{2, 8}, 9);
    const fs::path weights_path = dir / "roundtrip.rtxw";
    save_weights(saved, weights_path.string());
    const WeightStore loaded = load_weights(weights_path.string());
    bool weights_ok = saved.names() == loaded.names();
    for (const auto& name : saved.names()) {
        if (!weights_ok) break;
        const auto& a = saved.at(name);
        const auto& b = loaded.at(name);
        weights_ok = a->shape == b->shape && a->values == b->values;
    }

    const fs::path root = dir / "split";
    fs::create_directories(root / "low");
    fs::create_directories(root / "high");
    const ImageRGB low_stub = make_image(4, 4, 0.2f);
    const ImageRGB high_stub = make_image(4, 4, 0.7f);
    write_png((root / "low" / "p000.png").string(), low_stub);
    write_png((root / "high" / "p000.png").string(), high_stub);
    for (int i = 1; i < 500; ++i) {
        const std::string name = fmt("p%03d.png", i);
        fs::copy_file(root / "low" / "p000.png", root / "low" / name);
        fs::copy_file(root / "high" / "p000.png", root / "high" / name);
    }
    const DatasetSplits splits = load_pair_dataset(root.string(), 11);
    const bool split_ok = splits.train.pairs.size() == 485 && splits.eval.pairs.size() == 15 &&
                          splits.report.issues.empty();

    fs::remove_all(dir);
    const bool ok = fit_ok && png_ok && weights_ok && split_ok;
    return {ok, fmt("fit gamma %.2f beta %.2f (planted 2.25/0.35)%s, png max err %.3g (bound "
                    "%.3g), weights %s, split %zu/%zu",
                    fit.params.gamma, fit.params.beta, fit_ok ? "" : " MISS", png_err, 1.0 / 255.0,
                    weights_ok ? "bit-exact" : "DIFFER", splits.train.pairs.size(),
                    splits.eval.pairs.size())};
}

// Criterion 10: a second training run with identical seeds must produce the
// same loss logs byte for byte.
std::pair<bool, std::string> check_determinism(const TrainArtifacts& first) {
    if (!first.ok) return {false, "training artifacts unavailable"};
    Stopwatch clock;
    const TrainArtifacts second = run_desk_training();
    const fs::path dir = scratch_dir();
    int identical = 0;
    for (int p = 0; p < 3; ++p) {
        const fs::path a = dir / fmt("first_%d.csv", p);
        const fs::path b = dir / fmt("second_%d.csv", p);
        write_training_log(first.logs[p], a.string());
        write_training_log(second.logs[p], b.string());
        if (read_file(a) == read_file(b)) ++identical;
    }
    fs::remove_all(dir);
    const bool ok = identical == 3;
    return {ok, fmt("%d/3 phase logs byte-identical across reruns, %.0f s", identical,
                    clock.seconds())};
}

}  // namespace

int main() {
    std::setvbuf(stdout, nullptr, _IOLBF, 0);
    TrainArtifacts art;

    run_criterion(1, "loss gradients match central finite differences", check_loss_gradients);
    run_criterion(2, "conv2d and resize_nearest match nested-loop oracles", check_op_oracles);
    run_criterion(3, "loss identities hold exactly", check_loss_identities);
    run_criterion(4, "smoothness attenuates by exp at a step edge", check_structure_awareness);
    run_criterion(5, "desk-scale training halves every phase objective",
                  [&] { return check_training_convergence(art); });
    run_criterion(6, "enhancement raises held-out fidelity",
                  [&] { return check_held_out_fidelity(art); });
    run_criterion(7, "reflectance varies less across exposures than the images",
                  [&] { return check_reflectance_invariance(art); });
    run_criterion(8, "illumination-relative denoising honors its contracts", check_denoise_contract);
    run_criterion(9, "data pipeline round trips", check_data_pipeline);
    run_criterion(10, "training reruns are log-identical",
                  [&] { return check_determinism(art); });

    if (failures > 0) std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
