#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "retinex/tensor.hpp"

namespace retinex {

struct DecomNetConfig {
    int depth = 5;   // total conv layers; first and last carry no ReLU
    int width = 64;  // hidden channels
    int kernel = 3;
};

struct EnhanceNetConfig {
    int num_scales = 3;  // stride-2 encoder blocks, mirrored by the decoder
    int width = 64;      // channels per block
};

/// Decomposition result: reflectance and illumination, both sigmoid outputs.
struct DecomOutput {
    TensorFPtr R;  // [B,3,H,W]
    TensorFPtr I;  // [B,1,H,W]
};

/// Ordered name -> parameter map holding both networks' kernels and biases.
/// Decomposition parameters are named "decom.*", adjustment ones "enhance.*".
class WeightStore {
public:
    void insert(const std::string& name, TensorFPtr param);
    const TensorFPtr& at(const std::string& name) const;
    bool contains(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, TensorFPtr> params_;
};

/// He-style initialization: kernels ~ N(0, 2/fan_in), biases zero,
/// deterministic for a given seed. All parameters are gradient leaves.
WeightStore init_weights(const DecomNetConfig& decom_cfg, const EnhanceNetConfig& enhance_cfg,
                         std::uint64_t seed);

void save_weights(const WeightStore& w, const std::string& path);
WeightStore load_weights(const std::string& path);

// Architecture hyperparameters recovered from the parameter shapes, so a
// weights file is self-describing.
DecomNetConfig infer_decom_config(const WeightStore& w);
EnhanceNetConfig infer_enhance_config(const WeightStore& w);

/// Splits one image into (R, I). Accepts a single image; pairing exists only
/// in the losses.
DecomOutput decom_forward(const WeightStore& w, const TensorFPtr& S);

/// Per-call record of internal activation shapes, for tests.
struct EnhanceTrace {
    std::vector<std::vector<int>> encoder_shapes;
    std::vector<std::vector<int>> decoder_shapes;
};

/// Produces the adjusted illumination map from the low-light decomposition.
/// Spatial extents must be divisible by 2^num_scales.
TensorFPtr enhance_forward(const WeightStore& w, const TensorFPtr& R_low, const TensorFPtr& I_low,
                           EnhanceTrace* trace = nullptr);

}  // namespace retinex
