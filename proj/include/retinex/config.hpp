#pragma once

#include <cstdint>
#include <string>

#include "retinex/model.hpp"
#include "retinex/training.hpp"

namespace retinex {

/// Everything a training run reads from its config file: network shapes,
/// optimization settings, per-phase iteration budgets, and loss weights.
/// `train.iterations` and `train.phase` are not part of the file format;
/// phase_config() fills them from the per-phase fields below.
struct RunSettings {
    DecomNetConfig decom;
    EnhanceNetConfig enhance;
    TrainConfig train;
    std::int64_t iterations_decom = 2000;
    std::int64_t iterations_enhance = 2000;
    std::int64_t iterations_finetune = 1000;
};

/// Parse the flat `key = value` format. `#` starts a comment, blank lines
/// are skipped, later duplicates win. Unknown keys are collected and
/// reported together in one ConfigError; malformed numbers name the key.
RunSettings parse_settings(const std::string& text);

/// Canonical serialization, one key per line in fixed order. Values are
/// printed with %g, so parse -> serialize -> parse is a fixed point.
std::string serialize_settings(const RunSettings& settings);

RunSettings load_settings(const std::string& path);
void save_settings(const RunSettings& settings, const std::string& path);

/// The TrainConfig for one phase: copies `settings.train`, then sets the
/// phase tag and that phase's iteration budget.
TrainConfig phase_config(const RunSettings& settings, TrainPhase phase);

}  // namespace retinex
