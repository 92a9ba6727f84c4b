#include "retinex/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <random>

#include "retinex/errors.hpp"
#include "retinex/random.hpp"

namespace retinex {

void WeightStore::insert(const std::string& name, TensorFPtr param) {
    if (params_.count(name)) throw Error("weight store: duplicate parameter name " + name);
    if (!param) throw Error("weight store: null parameter " + name);
    order_.push_back(name);
    params_.emplace(name, std::move(param));
}

const TensorFPtr& WeightStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("weight store: no parameter named " + name);
    return it->second;
}

bool WeightStore::contains(const std::string& name) const { return params_.count(name) != 0; }

namespace {

std::string conv_name(const std::string& prefix, const char* part) { return prefix + "." + part; }

void add_conv(WeightStore& w, std::mt19937_64& rng, const std::string& prefix, int in_ch,
              int out_ch, int kernel) {
    const int fan_in = in_ch * kernel * kernel;
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    auto weights = TensorF::create({out_ch, in_ch, kernel, kernel}, true);
    for (auto& v : weights->values) v = static_cast<float>(stddev * rand_normal(rng));
    auto bias = TensorF::create({out_ch}, true);
    w.insert(conv_name(prefix, "weight"), weights);
    w.insert(conv_name(prefix, "bias"), bias);
}

// Applies a stored conv layer; spec is reconstructed from the weight shape.
TensorFPtr apply_conv(const WeightStore& w, const std::string& prefix, const TensorFPtr& x,
                      int stride) {
    const auto& weights = w.at(conv_name(prefix, "weight"));
    const auto& bias = w.at(conv_name(prefix, "bias"));
    auto spec = conv_spec(weights->dim(1), weights->dim(0), weights->dim(2), stride);
    return conv2d(x, weights, bias, spec);
}

void require_finite(const WeightStore& w, const char* action) {
    for (const auto& name : w.names())
        for (float v : w.at(name)->values)
            if (!std::isfinite(v))
                throw NumericError(std::string(action) + ": parameter " + name +
                                   " holds a non-finite value");
}

}  // namespace

WeightStore init_weights(const DecomNetConfig& decom_cfg, const EnhanceNetConfig& enhance_cfg,
                         std::uint64_t seed) {
    if (decom_cfg.depth < 3)
        throw ConfigError("decomposition depth must be at least 3, got " +
                          std::to_string(decom_cfg.depth));
    if (decom_cfg.width < 1 || enhance_cfg.width < 1)
        throw ConfigError("network width must be positive");
    if (decom_cfg.kernel != 3)
        throw ConfigError("decomposition kernel must be 3, got " + std::to_string(decom_cfg.kernel));
    if (enhance_cfg.num_scales < 1)
        throw ConfigError("adjustment scale count must be positive, got " +
                          std::to_string(enhance_cfg.num_scales));

    std::mt19937_64 rng(seed);
    WeightStore w;

    const int d = decom_cfg.depth, dw = decom_cfg.width;
    for (int i = 0; i < d; ++i) {
        const int in_ch = i == 0 ? 3 : dw;
        const int out_ch = i == d - 1 ? 4 : dw;
        add_conv(w, rng, "decom.conv" + std::to_string(i), in_ch, out_ch, decom_cfg.kernel);
    }

    const int M = enhance_cfg.num_scales, C = enhance_cfg.width;
    add_conv(w, rng, "enhance.stem", 4, C, 3);
    for (int k = 0; k < M; ++k) add_conv(w, rng, "enhance.down" + std::to_string(k), C, C, 3);
    for (int k = 0; k < M; ++k) add_conv(w, rng, "enhance.up" + std::to_string(k), C, C, 3);
    add_conv(w, rng, "enhance.fuse", M * C, C, 1);
    add_conv(w, rng, "enhance.out", C, 1, 3);
    // Dark start: the adjustment head opens near the low-light level instead of
    // mid-gray, so early enhance updates brighten instead of correcting an
    // overshoot.
    for (auto& v : w.at("enhance.out.bias")->values) v = -1.0f;
    return w;
}

// ---------------------------------------------------------------------------
// Serialization: magic "RTXW", version u32, record count u32; per record a
// u16 name length, the name, rank u8, extents u32 each, then the values as
// little-endian 32-bit floats. No padding anywhere.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'R', 'T', 'X', 'W'};
constexpr std::uint32_t kFormatVersion = 1;

void put_bytes(std::ofstream& out, const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void put_u16(std::ofstream& out, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>(v >> 8)};
    put_bytes(out, b, 2);
}

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(out, b, 4);
}

void put_f32(std::ofstream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

void get_bytes(std::ifstream& in, void* data, std::size_t n, const std::string& path) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw IoError("weights file " + path + " is truncated");
}

std::uint16_t get_u16(std::ifstream& in, const std::string& path) {
    unsigned char b[2];
    get_bytes(in, b, 2, path);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    get_bytes(in, b, 4, path);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

float get_f32(std::ifstream& in, const std::string& path) {
    const std::uint32_t bits = get_u32(in, path);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void save_weights(const WeightStore& w, const std::string& path) {
    require_finite(w, "save_weights");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    put_bytes(out, kMagic, 4);
    put_u32(out, kFormatVersion);
    put_u32(out, static_cast<std::uint32_t>(w.size()));
    for (const auto& name : w.names()) {
        const auto& t = w.at(name);
        if (name.size() > 0xffff) throw IoError("parameter name too long: " + name);
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        put_bytes(out, name.data(), name.size());
        unsigned char rank = static_cast<unsigned char>(t->rank());
        put_bytes(out, &rank, 1);
        for (int d : t->shape) put_u32(out, static_cast<std::uint32_t>(d));
        for (float v : t->values) put_f32(out, v);
    }
    out.flush();
    if (!out) throw IoError("failed writing " + path);
}

WeightStore load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open weights file " + path);
    char magic[4];
    get_bytes(in, magic, 4, path);
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("weights file " + path + " has wrong magic bytes");
    const std::uint32_t version = get_u32(in, path);
    if (version != kFormatVersion)
        throw IoError("weights file " + path + " has unsupported format version " +
                      std::to_string(version));
    const std::uint32_t count = get_u32(in, path);
    WeightStore w;
    for (std::uint32_t r = 0; r < count; ++r) {
        const std::uint16_t name_len = get_u16(in, path);
        std::string name(name_len, '\0');
        get_bytes(in, name.data(), name_len, path);
        unsigned char rank;
        get_bytes(in, &rank, 1, path);
        std::vector<int> shape(rank);
        for (auto& d : shape) {
            const std::uint32_t ext = get_u32(in, path);
            if (ext == 0 || ext > (1u << 24))
                throw IoError("weights file " + path + " declares invalid extent " +
                              std::to_string(ext) + " for " + name);
            d = static_cast<int>(ext);
        }
        auto t = TensorF::create(shape, true);
        for (auto& v : t->values) v = get_f32(in, path);
        w.insert(name, t);
    }
    require_finite(w, "load_weights");
    return w;
}

DecomNetConfig infer_decom_config(const WeightStore& w) {
    if (!w.contains("decom.conv0.weight"))
        throw IoError("weight store holds no decomposition network parameters");
    DecomNetConfig cfg;
    cfg.depth = 0;
    while (w.contains("decom.conv" + std::to_string(cfg.depth) + ".weight")) ++cfg.depth;
    const auto& first = w.at("decom.conv0.weight");
    cfg.width = first->dim(0);
    cfg.kernel = first->dim(2);
    return cfg;
}

EnhanceNetConfig infer_enhance_config(const WeightStore& w) {
    if (!w.contains("enhance.stem.weight"))
        throw IoError("weight store holds no adjustment network parameters");
    EnhanceNetConfig cfg;
    cfg.num_scales = 0;
    while (w.contains("enhance.down" + std::to_string(cfg.num_scales) + ".weight"))
        ++cfg.num_scales;
    cfg.width = w.at("enhance.stem.weight")->dim(0);
    return cfg;
}

DecomOutput decom_forward(const WeightStore& w, const TensorFPtr& S) {
    if (!S || S->rank() != 4 || S->channels() != 3)
        throw ShapeError("decom_forward: expected a [B,3,H,W] input");
    if (S->height() < 8 || S->width() < 8)
        throw ShapeError("decom_forward: spatial extents must be at least 8, got " +
                         std::to_string(S->height()) + "x" + std::to_string(S->width()));
    for (float v : S->values)
        if (!(v >= 0.0f && v <= 1.0f))
            throw NumericError("decom_forward: input value " + std::to_string(v) +
                               " outside [0,1]");

    const DecomNetConfig cfg = infer_decom_config(w);
    auto x = apply_conv(w, "decom.conv0", S, 1);  // feature extraction, no activation
    for (int i = 1; i < cfg.depth - 1; ++i)
        x = relu(apply_conv(w, "decom.conv" + std::to_string(i), x, 1));
    x = sigmoid(apply_conv(w, "decom.conv" + std::to_string(cfg.depth - 1), x, 1));
    if (x->channels() != 4)
        throw ShapeError("decom_forward: projection layer must emit 4 channels, got " +
                         std::to_string(x->channels()));
    DecomOutput out;
    out.R = slice_channels(x, 0, 3);
    out.I = slice_channels(x, 3, 1);
    return out;
}

TensorFPtr enhance_forward(const WeightStore& w, const TensorFPtr& R_low, const TensorFPtr& I_low,
                           EnhanceTrace* trace) {
    if (!R_low || R_low->rank() != 4 || R_low->channels() != 3)
        throw ShapeError("enhance_forward: expected a [B,3,H,W] reflectance");
    if (!I_low || I_low->rank() != 4 || I_low->channels() != 1)
        throw ShapeError("enhance_forward: expected a [B,1,H,W] illumination");
    const EnhanceNetConfig cfg = infer_enhance_config(w);
    const int M = cfg.num_scales;
    const int H = R_low->height(), W = R_low->width();
    if (H % (1 << M) != 0 || W % (1 << M) != 0)
        throw ShapeError("enhance_forward: spatial extents " + std::to_string(H) + "x" +
                         std::to_string(W) + " not divisible by " + std::to_string(1 << M));

    auto x = concat_channels<float>({R_low, I_low});

    // Encoder: a full-resolution stem (no activation), then M stride-2
    // contractions. Each level is kept for the mirrored decoder sum.
    std::vector<TensorFPtr> levels;
    levels.push_back(apply_conv(w, "enhance.stem", x, 1));
    for (int k = 0; k < M; ++k)
        levels.push_back(relu(apply_conv(w, "enhance.down" + std::to_string(k), levels.back(), 2)));
    if (trace)
        for (const auto& f : levels) trace->encoder_shapes.push_back(f->shape);

    // Decoder: upsample, convolve, activate, then sum with the encoder level
    // of the same scale. All M decoder maps are retained for fusion.
    std::vector<TensorFPtr> decoded;
    auto d = levels.back();
    for (int k = 0; k < M; ++k) {
        const auto& mirror = levels[static_cast<std::size_t>(M - 1 - k)];
        auto up = resize_nearest(d, mirror->height(), mirror->width());
        d = add(relu(apply_conv(w, "enhance.up" + std::to_string(k), up, 1)), mirror);
        decoded.push_back(d);
    }
    if (trace)
        for (const auto& f : decoded) trace->decoder_shapes.push_back(f->shape);

    // Multi-scale fusion at full resolution.
    std::vector<TensorFPtr> full_res;
    for (auto& f : decoded) full_res.push_back(resize_nearest(f, H, W));
    auto fused = apply_conv(w, "enhance.fuse", concat_channels<float>(full_res), 1);
    return sigmoid(apply_conv(w, "enhance.out", fused, 1));
}

}  // namespace retinex
