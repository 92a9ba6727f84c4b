#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "retinex/image.hpp"
#include "retinex/tensor.hpp"

namespace retinex {

/// One exposure pair. Both images share dimensions; id is the filename stem.
struct ImagePair {
    ImageRGB low;
    ImageRGB normal;
    std::string id;
};

enum class Split { train, eval };

struct PairDataset {
    std::vector<ImagePair> pairs;
    Split split = Split::train;
};

/// Per-file problems encountered during loading; loading never stops on them.
struct LoadReport {
    std::vector<std::string> issues;
    int loaded = 0;
    int skipped = 0;
};

struct DatasetSplits {
    PairDataset train;
    PairDataset eval;
    LoadReport report;
};

/// Loads <root>/low/*.png paired by filename with <root>/high/*.png (the
/// normal-light side may also be named normal/). Pairs are ordered by
/// filename; a seeded shuffle then assigns floor(97% * n) of them to train
/// and the rest to eval.
DatasetSplits load_pair_dataset(const std::string& root_dir, std::uint64_t seed);

struct PatchBatch {
    TensorFPtr low;     // [batch,3,patch,patch]
    TensorFPtr normal;  // [batch,3,patch,patch]
};

/// Aligned random crops: each batch entry picks a pair and a top-left corner,
/// and both crops come from those same coordinates.
PatchBatch sample_patch_batch(const PairDataset& ds, int batch, int patch, std::mt19937_64& rng);

}  // namespace retinex
