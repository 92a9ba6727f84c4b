#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "retinex/config.hpp"
#include "retinex/dataset.hpp"
#include "retinex/denoise.hpp"
#include "retinex/errors.hpp"
#include "retinex/image.hpp"
#include "retinex/model.hpp"
#include "retinex/pipeline.hpp"
#include "retinex/training.hpp"

namespace fs = std::filesystem;
using namespace retinex;

namespace {

std::vector<fs::path> list_pngs(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir);
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".png")
            out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw IoError("no .png images in " + dir);
    return out;
}

std::vector<fs::path> gather_inputs(const std::string& input) {
    if (fs::is_directory(input)) return list_pngs(input);
    if (!fs::is_regular_file(input)) throw IoError("input not found: " + input);
    return {fs::path(input)};
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw IoError("cannot create directory " + dir.string());
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

std::string fmt9(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

double mean_abs_diff(const ImageRGB& a, const ImageRGB& b) {
    double acc = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i)
        acc += std::abs(static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]));
    return acc / static_cast<double>(a.pixels.size());
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
    std::string input_dir;
    std::string output_dir;
    std::string target_hist = "none";
    double gamma = 2.0;
    double beta = 0.5;
    double sigma = 0.01;
    std::uint64_t seed = 0;
};

void run_synth(const SynthArgs& a) {
    std::vector<fs::path> files = list_pngs(a.input_dir);
    std::vector<ImageRGB> images;
    images.reserve(files.size());
    for (const fs::path& f : files) images.push_back(read_png(f.string()));

    DarkeningParams params{a.gamma, a.beta, a.sigma};
    bool fitted = false;
    double distance = 0.0;
    if (a.target_hist != "none") {
        YHistogram target = read_histogram_csv(a.target_hist);
        DarkeningFit fit = fit_darkening_params(images, target, a.sigma);
        params = fit.params;
        distance = fit.distance;
        fitted = true;
    }

    fs::path root(a.output_dir);
    ensure_dir(root / "low");
    ensure_dir(root / "high");
    std::mt19937_64 rng(a.seed);
    for (std::size_t i = 0; i < files.size(); ++i) {
        const std::string name = files[i].filename().string();
        ImageRGB low = synth_low_light(images[i], params, rng);
        write_png((root / "low" / name).string(), low);
        write_png((root / "high" / name).string(), images[i]);
    }

    std::ofstream manifest(root / "manifest.txt", std::ios::binary | std::ios::trunc);
    if (!manifest) throw IoError("cannot write manifest in " + a.output_dir);
    manifest << "gamma = " << fmt(params.gamma) << "\n";
    manifest << "beta = " << fmt(params.beta) << "\n";
    manifest << "sigma = " << fmt(params.noise_sigma) << "\n";
    manifest << "seed = " << a.seed << "\n";
    manifest << "images = " << files.size() << "\n";
    manifest << "fitted = " << (fitted ? 1 : 0) << "\n";
    if (fitted) {
        manifest << "target_hist = " << a.target_hist << "\n";
        manifest << "distance = " << fmt9(distance) << "\n";
    }
    if (!manifest) throw IoError("failed to write manifest in " + a.output_dir);
    std::cout << "wrote " << files.size() << " pairs to " << a.output_dir;
    if (fitted)
        std::cout << " (fitted gamma=" << fmt(params.gamma) << " beta=" << fmt(params.beta)
                  << ", distance=" << fmt9(distance) << ")";
    std::cout << "\n";
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
    std::vector<std::string> data_dirs;
    std::string phase = "all";
    std::string config_path;
    std::string out;
    std::string resume;
    std::uint64_t seed = 0;
    bool seed_given = false;
};

PairDataset merged_train_split(const std::vector<std::string>& dirs, std::uint64_t seed) {
    PairDataset ds;
    ds.split = Split::train;
    int eval_held_out = 0;
    for (const std::string& dir : dirs) {
        DatasetSplits splits = load_pair_dataset(dir, seed);
        for (const std::string& issue : splits.report.issues)
            std::cerr << "warning: " << issue << "\n";
        for (ImagePair& p : splits.train.pairs) ds.pairs.push_back(std::move(p));
        eval_held_out += static_cast<int>(splits.eval.pairs.size());
    }
    if (ds.pairs.empty())
        throw IoError("no training pairs found under the given --data-dir paths");
    std::cout << "loaded " << ds.pairs.size() << " training pairs (" << eval_held_out
              << " held out for eval)\n";
    return ds;
}

TrainLog run_one_phase(const TrainConfig& cfg, const PairDataset& ds, WeightStore& w,
                       const TrainSession& session) {
    switch (cfg.phase) {
        case TrainPhase::decom: return train_decom(cfg, ds, w, session);
        case TrainPhase::enhance: return train_enhance(cfg, ds, w, session);
        case TrainPhase::finetune: return finetune_end_to_end(cfg, ds, w, session);
    }
    throw ConfigError("unreachable phase");
}

void run_train(const TrainArgs& a) {
    RunSettings settings = a.config_path.empty() ? RunSettings{} : load_settings(a.config_path);
    if (a.seed_given) settings.train.seed = a.seed;

    std::vector<TrainPhase> phases;
    if (a.phase == "all")
        phases = {TrainPhase::decom, TrainPhase::enhance, TrainPhase::finetune};
    else if (a.phase == "decom") phases = {TrainPhase::decom};
    else if (a.phase == "enhance") phases = {TrainPhase::enhance};
    else phases = {TrainPhase::finetune};

    std::optional<TrainState> resume_state;
    WeightStore w;
    if (!a.resume.empty()) {
        if (phases.size() != 1)
            throw ConfigError("--resume requires a single --phase, not 'all'");
        fs::path state_path(a.resume);
        if (state_path.extension() != ".rtxs")
            throw ConfigError("--resume expects the .rtxs checkpoint state file");
        resume_state = load_train_state(state_path.string());
        fs::path weights_path = state_path;
        weights_path.replace_extension(".rtxw");
        w = load_weights(weights_path.string());
    } else if (phases.front() == TrainPhase::decom) {
        w = init_weights(settings.decom, settings.enhance, settings.train.seed);
    } else {
        // A standalone later phase continues from the weights file the
        // previous phase left at --out.
        if (!fs::is_regular_file(a.out))
            throw IoError("phase " + a.phase + " needs starting weights at " + a.out +
                          "; run the earlier phases first or pass --resume");
        w = load_weights(a.out);
    }

    PairDataset ds = merged_train_split(a.data_dirs, settings.train.seed);

    fs::path out_path(a.out);
    fs::path ckpt_dir = out_path.parent_path();
    if (ckpt_dir.empty()) ckpt_dir = ".";
    ensure_dir(ckpt_dir);
    fs::path log_base = out_path;
    log_base.replace_extension("");

    for (TrainPhase phase : phases) {
        TrainConfig cfg = phase_config(settings, phase);
        TrainSession session;
        session.checkpoint_dir = ckpt_dir.string();
        if (resume_state) session.resume = &*resume_state;
        TrainLog log = run_one_phase(cfg, ds, w, session);
        if (resume_state && log.rows.empty()) {
            std::cout << "phase " << train_phase_name(phase)
                      << " already finished; nothing to do\n";
            return;
        }
        std::string log_path =
            log_base.string() + "_" + train_phase_name(phase) + "_log.csv";
        write_training_log(log, log_path);
        save_weights(w, a.out);
        std::cout << "phase " << train_phase_name(phase) << ": " << log.rows.size()
                  << " iterations, final loss " << fmt9(log.rows.back().total) << ", log "
                  << log_path << "\n";
    }
    std::cout << "weights written to " << a.out << "\n";
}

// ---- decompose ------------------------------------------------------------

struct DecomposeArgs {
    std::string weights;
    std::string input;
    std::string out_dir;
};

void run_decompose(const DecomposeArgs& a) {
    WeightStore w = load_weights(a.weights);
    std::vector<fs::path> inputs = gather_inputs(a.input);
    ensure_dir(a.out_dir);
    EnhanceOptions opt;
    opt.bypass_adjustment = true;
    for (const fs::path& f : inputs) {
        ImageRGB img = read_png(f.string());
        EnhanceResult res = enhance_image(img, w, std::nullopt, opt);
        const std::string stem = f.stem().string();
        write_png((fs::path(a.out_dir) / (stem + "_R.png")).string(), res.R);
        write_png((fs::path(a.out_dir) / (stem + "_I.png")).string(), res.I);
        // With adjustment bypassed, S_hat is the clamped R*I reconstruction.
        std::cout << stem << ": mean reconstruction error "
                  << fmt9(mean_abs_diff(res.S_hat, img)) << "\n";
    }
}

// ---- enhance --------------------------------------------------------------

struct EnhanceArgs {
    std::string weights;
    std::string input;
    std::string out_dir;
    std::string denoise = "on";
    bool save_intermediates = false;
};

void run_enhance(const EnhanceArgs& a) {
    WeightStore w = load_weights(a.weights);
    std::vector<fs::path> inputs = gather_inputs(a.input);
    ensure_dir(a.out_dir);
    std::optional<DenoiseConfig> dn;
    if (a.denoise == "on") dn = DenoiseConfig{};
    for (const fs::path& f : inputs) {
        ImageRGB img = read_png(f.string());
        EnhanceResult res = enhance_image(img, w, dn);
        const std::string stem = f.stem().string();
        write_png((fs::path(a.out_dir) / (stem + "_enhanced.png")).string(), res.S_hat);
        if (a.save_intermediates) {
            write_png((fs::path(a.out_dir) / (stem + "_R.png")).string(), res.R);
            write_png((fs::path(a.out_dir) / (stem + "_I.png")).string(), res.I);
            write_png((fs::path(a.out_dir) / (stem + "_Ihat.png")).string(), res.I_hat);
        }
    }
    std::cout << "enhanced " << inputs.size() << " image" << (inputs.size() == 1 ? "" : "s")
              << " into " << a.out_dir << "\n";
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
    std::string weights;
    std::string data_dir;
    std::string denoise = "on";
    std::string report;
    std::uint64_t seed = 0;
};

void run_eval(const EvalArgs& a) {
    WeightStore w = load_weights(a.weights);
    DatasetSplits splits = load_pair_dataset(a.data_dir, a.seed);
    for (const std::string& issue : splits.report.issues)
        std::cerr << "warning: " << issue << "\n";
    if (splits.eval.pairs.empty())
        throw IoError("no eval pairs with ground truth in " + a.data_dir);

    std::optional<DenoiseConfig> dn;
    if (a.denoise == "on") dn = DenoiseConfig{};

    std::ofstream csv(a.report, std::ios::binary | std::ios::trunc);
    if (!csv) throw IoError("cannot open report file " + a.report);
    csv << "id,psnr_in,psnr_out,ssim_in,ssim_out\n";
    double sum[4] = {0, 0, 0, 0};
    for (const ImagePair& pair : splits.eval.pairs) {
        EnhanceResult res = enhance_image(pair.low, w, dn);
        double v[4] = {psnr(pair.low, pair.normal), psnr(res.S_hat, pair.normal),
                       ssim(pair.low, pair.normal), ssim(res.S_hat, pair.normal)};
        for (int i = 0; i < 4; ++i) sum[i] += v[i];
        csv << pair.id << "," << fmt9(v[0]) << "," << fmt9(v[1]) << "," << fmt9(v[2]) << ","
            << fmt9(v[3]) << "\n";
    }
    const double n = static_cast<double>(splits.eval.pairs.size());
    csv << "mean," << fmt9(sum[0] / n) << "," << fmt9(sum[1] / n) << "," << fmt9(sum[2] / n)
        << "," << fmt9(sum[3] / n) << "\n";
    if (!csv) throw IoError("failed to write report file " + a.report);
    std::cout << "evaluated " << splits.eval.pairs.size() << " pairs: mean psnr "
              << fmt9(sum[0] / n) << " -> " << fmt9(sum[1] / n) << ", mean ssim "
              << fmt9(sum[2] / n) << " -> " << fmt9(sum[3] / n) << "\n";
}

// ---- hist -----------------------------------------------------------------

struct HistArgs {
    std::string input_dir;
    std::string out;
};

void run_hist(const HistArgs& a) {
    std::vector<fs::path> files = list_pngs(a.input_dir);
    std::vector<ImageRGB> images;
    images.reserve(files.size());
    for (const fs::path& f : files) images.push_back(read_png(f.string()));
    YHistogram hist = y_histogram(images);
    write_histogram_csv(hist, a.out);
    std::cout << "pooled " << hist.total << " pixels from " << files.size() << " images into "
              << a.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Retinex-style low-light enhancement toolkit"};
    app.require_subcommand(1);

    SynthArgs synth;
    CLI::App* s = app.add_subcommand("synth", "Darken normal-light images into a paired dataset");
    s->add_option("--input-dir", synth.input_dir, "Directory of normal-light .png images")->required();
    s->add_option("--output-dir", synth.output_dir, "Output root; gets low/, high/, manifest.txt")->required();
    s->add_option("--target-hist", synth.target_hist,
                  "Y-histogram CSV to fit darkening against, or 'none'")->capture_default_str();
    s->add_option("--gamma", synth.gamma, "Exposure exponent (>= 1)")->capture_default_str();
    s->add_option("--beta", synth.beta, "Brightness scale in (0, 1]")->capture_default_str();
    s->add_option("--sigma", synth.sigma, "Additive Gaussian noise level")->capture_default_str();
    s->add_option("--seed", synth.seed, "Noise RNG seed")->capture_default_str();
    s->callback([&] { run_synth(synth); });

    TrainArgs train;
    CLI::App* t = app.add_subcommand("train", "Train decomposition and adjustment networks");
    t->add_option("--data-dir", train.data_dirs,
                  "Dataset root with low/ and high/; repeat to pool several")->required();
    t->add_option("--phase", train.phase, "Training phase")
        ->check(CLI::IsMember({"decom", "enhance", "finetune", "all"}))
        ->capture_default_str();
    t->add_option("--config", train.config_path, "Key = value settings file");
    t->add_option("--out", train.out, "Weights output path")->required();
    t->add_option("--resume", train.resume, "Checkpoint .rtxs state file to resume from");
    t->add_option("--seed", train.seed, "Overrides the config seed");
    t->callback([&] {
        train.seed_given = t->count("--seed") > 0;
        run_train(train);
    });

    DecomposeArgs decompose;
    CLI::App* d = app.add_subcommand("decompose", "Write reflectance and illumination maps");
    d->add_option("--weights", decompose.weights, "Trained weights file")->required();
    d->add_option("--input", decompose.input, "Input .png or directory of .png")->required();
    d->add_option("--out-dir", decompose.out_dir, "Output directory")->required();
    d->callback([&] { run_decompose(decompose); });

    EnhanceArgs enhance;
    CLI::App* e = app.add_subcommand("enhance", "Enhance low-light images");
    e->add_option("--weights", enhance.weights, "Trained weights file")->required();
    e->add_option("--input", enhance.input, "Input .png or directory of .png")->required();
    e->add_option("--out-dir", enhance.out_dir, "Output directory")->required();
    e->add_option("--denoise", enhance.denoise, "Reflectance denoising stage")
        ->check(CLI::IsMember({"on", "off"}))->capture_default_str();
    e->add_flag("--save-intermediates", enhance.save_intermediates,
                "Also write R, I, and adjusted-I maps");
    e->callback([&] { run_enhance(enhance); });

    EvalArgs eval;
    CLI::App* v = app.add_subcommand("eval", "PSNR/SSIM report on the held-out eval split");
    v->add_option("--weights", eval.weights, "Trained weights file")->required();
    v->add_option("--data-dir", eval.data_dir, "Dataset root with low/ and high/")->required();
    v->add_option("--denoise", eval.denoise, "Reflectance denoising stage")
        ->check(CLI::IsMember({"on", "off"}))->capture_default_str();
    v->add_option("--report", eval.report, "Output CSV path")->required();
    v->add_option("--seed", eval.seed, "Split seed; match the training run")->capture_default_str();
    v->callback([&] { run_eval(eval); });

    HistArgs hist;
    CLI::App* h = app.add_subcommand("hist", "Pooled luma histogram of a directory");
    h->add_option("--input-dir", hist.input_dir, "Directory of .png images")->required();
    h->add_option("--out", hist.out, "Output CSV path")->required();
    h->callback([&] { run_hist(hist); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 1;
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 1;
    } catch (const NumericError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 3;
    } catch (const Error& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return 2;
    }
    return 0;
}
