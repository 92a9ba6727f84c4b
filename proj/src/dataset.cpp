#include "retinex/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

#include "retinex/errors.hpp"
#include "retinex/random.hpp"

namespace fs = std::filesystem;

namespace retinex {

namespace {

std::vector<std::string> list_png_names(const fs::path& dir) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        if (entry.path().extension() == ".png") names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace

DatasetSplits load_pair_dataset(const std::string& root_dir, std::uint64_t seed) {
    const fs::path root(root_dir);
    const fs::path low_dir = root / "low";
    if (!fs::is_directory(low_dir))
        throw IoError("dataset root " + root_dir + " has no low/ directory");
    fs::path normal_dir = root / "high";
    if (!fs::is_directory(normal_dir)) normal_dir = root / "normal";
    if (!fs::is_directory(normal_dir))
        throw IoError("dataset root " + root_dir + " has no high/ or normal/ directory");

    DatasetSplits out;
    out.train.split = Split::train;
    out.eval.split = Split::eval;
    LoadReport& report = out.report;

    const auto low_names = list_png_names(low_dir);
    const auto normal_names = list_png_names(normal_dir);
    const std::set<std::string> normal_set(normal_names.begin(), normal_names.end());
    const std::set<std::string> low_set(low_names.begin(), low_names.end());

    for (const auto& name : normal_names)
        if (!low_set.count(name)) {
            report.issues.push_back(normal_dir.filename().string() + "/" + name +
                                    " has no low-light counterpart");
            ++report.skipped;
        }

    std::vector<ImagePair> pairs;
    for (const auto& name : low_names) {
        if (!normal_set.count(name)) {
            report.issues.push_back("low/" + name + " has no normal-light counterpart");
            ++report.skipped;
            continue;
        }
        ImagePair pair;
        pair.id = fs::path(name).stem().string();
        try {
            pair.low = read_png((low_dir / name).string());
            pair.normal = read_png((normal_dir / name).string());
        } catch (const Error& e) {
            report.issues.push_back(e.what());
            ++report.skipped;
            continue;
        }
        if (pair.low.width != pair.normal.width || pair.low.height != pair.normal.height) {
            report.issues.push_back(name + ": pair dimensions differ (" +
                                    std::to_string(pair.low.width) + "x" +
                                    std::to_string(pair.low.height) + " vs " +
                                    std::to_string(pair.normal.width) + "x" +
                                    std::to_string(pair.normal.height) + ")");
            ++report.skipped;
            continue;
        }
        pairs.push_back(std::move(pair));
        ++report.loaded;
    }

    if (pairs.empty()) {
        report.issues.push_back("dataset root " + root_dir + " yielded no usable pairs");
        return out;
    }

    // Seeded shuffle picks the train subset; within each split the original
    // filename order is kept.
    const std::size_t n = pairs.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(seed);
    for (std::size_t i = n - 1; i > 0; --i)
        std::swap(order[i], order[rand_index(rng, i + 1)]);

    const std::size_t train_count = (97 * n) / 100;
    std::vector<bool> in_train(n, false);
    for (std::size_t i = 0; i < train_count; ++i) in_train[order[i]] = true;
    for (std::size_t i = 0; i < n; ++i)
        (in_train[i] ? out.train : out.eval).pairs.push_back(std::move(pairs[i]));
    return out;
}

PatchBatch sample_patch_batch(const PairDataset& ds, int batch, int patch, std::mt19937_64& rng) {
    if (ds.pairs.empty()) throw IoError("sample_patch_batch: dataset is empty");
    if (batch < 1) throw ShapeError("sample_patch_batch: batch must be positive");
    if (patch < 1) throw ShapeError("sample_patch_batch: patch must be positive");

    PatchBatch out;
    out.low = TensorF::create({batch, 3, patch, patch});
    out.normal = TensorF::create({batch, 3, patch, patch});
    for (int b = 0; b < batch; ++b) {
        const auto& pair = ds.pairs[rand_index(rng, ds.pairs.size())];
        if (patch > pair.low.width || patch > pair.low.height)
            throw ShapeError("sample_patch_batch: patch " + std::to_string(patch) +
                             " exceeds image extent " + std::to_string(pair.low.width) + "x" +
                             std::to_string(pair.low.height) + " of pair " + pair.id);
        const int y0 = static_cast<int>(rand_index(rng, pair.low.height - patch + 1));
        const int x0 = static_cast<int>(rand_index(rng, pair.low.width - patch + 1));
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x) {
                    out.low->at(b, c, y, x) = pair.low.at(y0 + y, x0 + x, c);
                    out.normal->at(b, c, y, x) = pair.normal.at(y0 + y, x0 + x, c);
                }
    }
    return out;
}

}  // namespace retinex
