#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "retinex/dataset.hpp"
#include "retinex/losses.hpp"
#include "retinex/model.hpp"

namespace retinex {

enum class TrainPhase { decom = 0, enhance = 1, finetune = 2 };

const char* train_phase_name(TrainPhase phase);

/// Schedule for one optimization phase. The learning rate decays by lr_decay
/// once per epoch, an epoch being max(1, pairs / batch) iterations. The
/// fine-tune phase scales the base rate by finetune_lr_scale. Each phase
/// seeds its patch sampler with seed + the phase index, so a multi-phase run
/// does not replay one patch sequence three times.
struct TrainConfig {
    TrainPhase phase = TrainPhase::decom;
    std::int64_t iterations = 2000;
    int batch = 16;
    int patch = 96;
    double learning_rate = 0.001;
    double lr_decay = 0.95;
    double momentum = 0.0;
    double finetune_lr_scale = 0.1;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 500;
    LossWeights loss_weights;

    void require_valid() const;
};

/// One log row, recorded before that iteration's parameter update.
struct TrainRow {
    std::int64_t iteration = 0;
    double lr = 0.0;
    float total = 0.0f;
    float recon = 0.0f;
    float ir = 0.0f;
    float is = 0.0f;
};

struct TrainLog {
    TrainPhase phase = TrainPhase::decom;
    LossWeights weights;
    std::vector<TrainRow> rows;
};

/// CSV: a `# lambda_...` line recording the loss coefficients, a header, one
/// row per iteration.
void write_training_log(const TrainLog& log, const std::string& path);

struct VelocityRecord {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
};

/// Mid-run optimizer state, enough to continue a run as if uninterrupted.
struct TrainState {
    TrainPhase phase = TrainPhase::decom;
    std::int64_t next_iteration = 0;
    double lr = 0.0;              // rate in effect when the state was written
    std::string rng_state;        // mt19937_64 stream state, text form
    std::vector<VelocityRecord> velocities;  // present when momentum is used
};

void save_train_state(const TrainState& state, const std::string& path);
TrainState load_train_state(const std::string& path);

std::string checkpoint_weights_path(const std::string& dir, TrainPhase phase);
std::string checkpoint_state_path(const std::string& dir, TrainPhase phase);

struct TrainSession {
    std::string checkpoint_dir;          // empty disables checkpointing
    const TrainState* resume = nullptr;  // continue from a saved state
};

/// p <- p - lr * grad(p) for every parameter whose name starts with prefix,
/// then clears their grads. A selected parameter without a populated
/// gradient, or a prefix selecting nothing, is an error.
void sgd_step(WeightStore& w, double lr, const std::string& prefix = "");

// Phase drivers. Each samples aligned patch batches, evaluates its phase
// objective, backpropagates, and updates only its phase's parameters
// (fine-tune updates all). A non-finite loss aborts before the update, so
// the last written checkpoint stays valid. A resumed run whose stored
// iteration already reached cfg.iterations returns an empty log.
TrainLog train_decom(const TrainConfig& cfg, const PairDataset& ds, WeightStore& w,
                     const TrainSession& session = {});
TrainLog train_enhance(const TrainConfig& cfg, const PairDataset& ds, WeightStore& w,
                       const TrainSession& session = {});
TrainLog finetune_end_to_end(const TrainConfig& cfg, const PairDataset& ds, WeightStore& w,
                             const TrainSession& session = {});

}  // namespace retinex
