#include "retinex/training.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "retinex/errors.hpp"

namespace retinex {

namespace {

constexpr char kStateMagic[4] = {'R', 'T', 'X', 'S'};
constexpr std::uint32_t kStateVersion = 1;

void put_bytes(std::ofstream& out, const void* data, std::size_t n) {
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

void put_u8(std::ofstream& out, std::uint8_t v) { put_bytes(out, &v, 1); }

void put_u16(std::ofstream& out, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    put_bytes(out, b, 2);
}

void put_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(out, b, 4);
}

void put_u64(std::ofstream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    put_bytes(out, b, 8);
}

void put_f32(std::ofstream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

void put_f64(std::ofstream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(out, bits);
}

void get_bytes(std::ifstream& in, void* data, std::size_t n, const std::string& path) {
    in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
        throw IoError("state file " + path + " is truncated");
}

std::uint8_t get_u8(std::ifstream& in, const std::string& path) {
    std::uint8_t v;
    get_bytes(in, &v, 1, path);
    return v;
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

std::uint64_t get_u64(std::ifstream& in, const std::string& path) {
    unsigned char b[8];
    get_bytes(in, b, 8, path);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

float get_f32(std::ifstream& in, const std::string& path) {
    const std::uint32_t bits = get_u32(in, path);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

double get_f64(std::ifstream& in, const std::string& path) {
    const std::uint64_t bits = get_u64(in, path);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

struct StepOutcome {
    TensorFPtr total;
    float recon = 0.0f;
    float ir = 0.0f;
    float is = 0.0f;
};

void apply_update(WeightStore& w, double lr, const std::string& prefix, double momentum,
                  std::map<std::string, std::vector<float>>& velocity) {
    if (momentum == 0.0) {
        sgd_step(w, lr, prefix);
        return;
    }
    int matched = 0;
    for (const auto& name : w.names()) {
        if (name.rfind(prefix, 0) != 0) continue;
        ++matched;
        auto p = w.at(name);
        if (p->grad.size() != p->values.size())
            throw Error("parameter " + name + " has no gradient to apply");
        auto& v = velocity[name];
        if (v.size() != p->values.size()) v.assign(p->values.size(), 0.0f);
        for (std::size_t i = 0; i < p->values.size(); ++i) {
            v[i] = static_cast<float>(momentum * static_cast<double>(v[i]) +
                                      static_cast<double>(p->grad[i]));
            p->values[i] = static_cast<float>(static_cast<double>(p->values[i]) -
                                              lr * static_cast<double>(v[i]));
        }
        p->grad.clear();
    }
    if (matched == 0) throw Error("no parameters match prefix '" + prefix + "'");
}

void write_checkpoint(const std::string& dir, TrainPhase phase, const WeightStore& w,
                      std::int64_t next_iteration, double lr, const std::mt19937_64& rng,
                      const std::map<std::string, std::vector<float>>& velocity) {
    save_weights(w, checkpoint_weights_path(dir, phase));
    TrainState st;
    st.phase = phase;
    st.next_iteration = next_iteration;
    st.lr = lr;
    std::ostringstream os;
    os << rng;
    st.rng_state = os.str();
    for (const auto& [name, values] : velocity) {
        VelocityRecord rec;
        rec.name = name;
        rec.shape = w.at(name)->shape;
        rec.values = values;
        st.velocities.push_back(std::move(rec));
    }
    save_train_state(st, checkpoint_state_path(dir, phase));
}

TrainLog run_phase(const TrainConfig& cfg, const PairDataset& ds, WeightStore& w,
                   const TrainSession& session, TrainPhase phase,
                   const std::string& update_prefix, double lr_scale,
                   const std::function<StepOutcome(const PatchBatch&)>& step) {
    cfg.require_valid();
    if (cfg.phase != phase)
        throw ConfigError(std::string("config selects phase '") + train_phase_name(cfg.phase) +
                          "' but the " + train_phase_name(phase) + " driver was invoked");
    if (ds.pairs.empty()) throw IoError("training needs a nonempty dataset");
    (void)infer_decom_config(w);
    if (cfg.patch < 8) throw ConfigError("patch must be at least 8 for the decomposition net");
    if (phase != TrainPhase::decom) {
        const auto net = infer_enhance_config(w);
        const int multiple = 1 << net.num_scales;
        if (cfg.patch % multiple != 0)
            throw ConfigError("patch " + std::to_string(cfg.patch) +
                              " is not divisible by the adjustment net's factor " +
                              std::to_string(multiple));
    }

    const std::int64_t epoch_iters =
        std::max<std::int64_t>(1, static_cast<std::int64_t>(ds.pairs.size()) / cfg.batch);
    const double base_lr = cfg.learning_rate * lr_scale;

    std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(phase));
    std::map<std::string, std::vector<float>> velocity;
    std::int64_t start = 0;
    if (session.resume) {
        if (session.resume->phase != phase)
            throw ConfigError(std::string("resume state belongs to phase '") +
                              train_phase_name(session.resume->phase) + "', not '" +
                              train_phase_name(phase) + "'");
        start = session.resume->next_iteration;
        std::istringstream in(session.resume->rng_state);
        in >> rng;
        if (!in) throw IoError("resume state carries an unreadable sampler state");
        for (const auto& rec : session.resume->velocities) {
            if (!w.contains(rec.name))
                throw IoError("resume state carries velocity for unknown parameter " + rec.name);
            if (rec.values.size() != w.at(rec.name)->values.size())
                throw IoError("resume velocity for " + rec.name + " has the wrong element count");
            velocity[rec.name] = rec.values;
        }
    }

    TrainLog log;
    log.phase = phase;
    log.weights = cfg.loss_weights;
    for (std::int64_t k = start; k < cfg.iterations; ++k) {
        const double lr = base_lr * std::pow(cfg.lr_decay, static_cast<double>(k / epoch_iters));
        const PatchBatch batch = sample_patch_batch(ds, cfg.batch, cfg.patch, rng);
        const StepOutcome out = step(batch);
        const float total = scalar_value(out.total);
        if (!std::isfinite(total) || !std::isfinite(out.recon) || !std::isfinite(out.ir) ||
            !std::isfinite(out.is))
            throw NumericError("loss became non-finite at iteration " + std::to_string(k) +
                               "; the last checkpoint is retained");
        log.rows.push_back({k, lr, total, out.recon, out.ir, out.is});
        backprop(out.total);
        apply_update(w, lr, update_prefix, cfg.momentum, velocity);
        if (!session.checkpoint_dir.empty() &&
            ((k + 1) % cfg.checkpoint_every == 0 || k + 1 == cfg.iterations))
            write_checkpoint(session.checkpoint_dir, phase, w, k + 1, lr, rng, velocity);
    }
    return log;
}

}  // namespace

const char* train_phase_name(TrainPhase phase) {
    switch (phase) {
        case TrainPhase::decom: return "decom";
        case TrainPhase::enhance: return "enhance";
        case TrainPhase::finetune: return "finetune";
    }
    return "unknown";
}

void TrainConfig::require_valid() const {
    if (iterations < 1) throw ConfigError("iterations must be positive");
    if (batch < 1) throw ConfigError("batch must be positive");
    if (patch < 1) throw ConfigError("patch must be positive");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be nonnegative");
    if (!(lr_decay > 0.0)) throw ConfigError("lr_decay must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (!(finetune_lr_scale >= 0.0)) throw ConfigError("finetune_lr_scale must be nonnegative");
    if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
}

void write_training_log(const TrainLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open training log " + path + " for writing");
    char line[256];
    std::snprintf(line, sizeof line, "# lambda_ir=%g lambda_is=%g lambda_g=%g\n",
                  static_cast<double>(log.weights.lambda_ir),
                  static_cast<double>(log.weights.lambda_is),
                  static_cast<double>(log.weights.lambda_g));
    out << line << "iteration,lr,total_loss,recon,ir,is\n";
    for (const auto& row : log.rows) {
        std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                      static_cast<long long>(row.iteration), row.lr,
                      static_cast<double>(row.total), static_cast<double>(row.recon),
                      static_cast<double>(row.ir), static_cast<double>(row.is));
        out << line;
    }
    if (!out) throw IoError("failed writing training log " + path);
}

void save_train_state(const TrainState& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open state file " + path + " for writing");
    put_bytes(out, kStateMagic, 4);
    put_u32(out, kStateVersion);
    put_u8(out, static_cast<std::uint8_t>(state.phase));
    put_u64(out, static_cast<std::uint64_t>(state.next_iteration));
    put_f64(out, state.lr);
    if (state.rng_state.size() > (1u << 20))
        throw IoError("sampler state is implausibly large");
    put_u32(out, static_cast<std::uint32_t>(state.rng_state.size()));
    put_bytes(out, state.rng_state.data(), state.rng_state.size());
    put_u32(out, static_cast<std::uint32_t>(state.velocities.size()));
    for (const auto& rec : state.velocities) {
        put_u16(out, static_cast<std::uint16_t>(rec.name.size()));
        put_bytes(out, rec.name.data(), rec.name.size());
        put_u8(out, static_cast<std::uint8_t>(rec.shape.size()));
        std::size_t count = 1;
        for (const int d : rec.shape) {
            put_u32(out, static_cast<std::uint32_t>(d));
            count *= static_cast<std::size_t>(d);
        }
        if (count != rec.values.size())
            throw IoError("velocity record " + rec.name + " disagrees with its shape");
        for (const float v : rec.values) put_f32(out, v);
    }
    if (!out) throw IoError("failed writing state file " + path);
}

TrainState load_train_state(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open state file " + path);
    char magic[4];
    get_bytes(in, magic, 4, path);
    if (std::memcmp(magic, kStateMagic, 4) != 0)
        throw IoError("state file " + path + " has wrong magic bytes");
    const std::uint32_t version = get_u32(in, path);
    if (version != kStateVersion)
        throw IoError("state file " + path + " has unsupported version " +
                      std::to_string(version));
    TrainState st;
    const std::uint8_t phase = get_u8(in, path);
    if (phase > 2) throw IoError("state file " + path + " names an unknown phase");
    st.phase = static_cast<TrainPhase>(phase);
    st.next_iteration = static_cast<std::int64_t>(get_u64(in, path));
    st.lr = get_f64(in, path);
    const std::uint32_t rng_len = get_u32(in, path);
    if (rng_len > (1u << 20)) throw IoError("state file " + path + " is malformed");
    st.rng_state.resize(rng_len);
    get_bytes(in, st.rng_state.data(), rng_len, path);
    const std::uint32_t vel_count = get_u32(in, path);
    if (vel_count > (1u << 16)) throw IoError("state file " + path + " is malformed");
    for (std::uint32_t r = 0; r < vel_count; ++r) {
        VelocityRecord rec;
        const std::uint16_t name_len = get_u16(in, path);
        rec.name.resize(name_len);
        get_bytes(in, rec.name.data(), name_len, path);
        const std::uint8_t rank = get_u8(in, path);
        std::size_t count = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            const std::uint32_t ext = get_u32(in, path);
            if (ext == 0 || ext > (1u << 24))
                throw IoError("state file " + path + " declares invalid extent for " + rec.name);
            rec.shape.push_back(static_cast<int>(ext));
            count *= ext;
        }
        rec.values.resize(count);
        for (auto& v : rec.values) v = get_f32(in, path);
        st.velocities.push_back(std::move(rec));
    }
    return st;
}

std::string checkpoint_weights_path(const std::string& dir, TrainPhase phase) {
    return (std::filesystem::path(dir) /
            (std::string(train_phase_name(phase)) + "_checkpoint.rtxw"))
        .string();
}

std::string checkpoint_state_path(const std::string& dir, TrainPhase phase) {
    return (std::filesystem::path(dir) /
            (std::string(train_phase_name(phase)) + "_checkpoint.rtxs"))
        .string();
}

void sgd_step(WeightStore& w, double lr, const std::string& prefix) {
    int matched = 0;
    for (const auto& name : w.names()) {
        if (name.rfind(prefix, 0) != 0) continue;
        ++matched;
        auto p = w.at(name);
        if (p->grad.size() != p->values.size())
            throw Error("parameter " + name + " has no gradient to apply");
        for (std::size_t i = 0; i < p->values.size(); ++i)
            p->values[i] = static_cast<float>(static_cast<double>(p->values[i]) -
                                              lr * static_cast<double>(p->grad[i]));
        p->grad.clear();
    }
    if (matched == 0) throw Error("no parameters match prefix '" + prefix + "'");
}

TrainLog train_decom(const TrainConfig& cfg, const PairDataset& ds, WeightStore& w,
                     const TrainSession& session) {
    const auto step = [&](const PatchBatch& b) {
        const auto low = decom_forward(w, b.low);
        const auto normal = decom_forward(w, b.normal);
        const auto terms =
            decom_total_loss(low.R, low.I, normal.R, normal.I, b.low, b.normal, cfg.loss_weights);
        return StepOutcome{terms.total, scalar_value(terms.recon), scalar_value(terms.ir),
                           scalar_value(terms.is)};
    };
    return run_phase(cfg, ds, w, session, TrainPhase::decom, "decom.", 1.0, step);
}

TrainLog train_enhance(const TrainConfig& cfg, const PairDataset& ds, WeightStore& w,
                       const TrainSession& session) {
    const auto step = [&](const PatchBatch& b) {
        TensorFPtr R_low, I_low;
        {
            NoGradGuard guard;  // the decomposition stays frozen this phase
            const auto dec = decom_forward(w, b.low);
            R_low = dec.R;
            I_low = dec.I;
        }
        const auto I_hat = enhance_forward(w, R_low, I_low);
        const auto terms = enhance_loss(R_low, I_hat, b.normal, cfg.loss_weights);
        return StepOutcome{terms.total, scalar_value(terms.recon), 0.0f,
                           scalar_value(terms.is)};
    };
    return run_phase(cfg, ds, w, session, TrainPhase::enhance, "enhance.", 1.0, step);
}

TrainLog finetune_end_to_end(const TrainConfig& cfg, const PairDataset& ds, WeightStore& w,
                             const TrainSession& session) {
    const auto step = [&](const PatchBatch& b) {
        const auto low = decom_forward(w, b.low);
        const auto normal = decom_forward(w, b.normal);
        const auto dterms =
            decom_total_loss(low.R, low.I, normal.R, normal.I, b.low, b.normal, cfg.loss_weights);
        const auto I_hat = enhance_forward(w, low.R, low.I);
        const auto eterms = enhance_loss(low.R, I_hat, b.normal, cfg.loss_weights);
        const auto joint = add(dterms.total, eterms.total);
        return StepOutcome{joint, scalar_value(dterms.recon) + scalar_value(eterms.recon),
                           scalar_value(dterms.ir),
                           scalar_value(dterms.is) + scalar_value(eterms.is)};
    };
    return run_phase(cfg, ds, w, session, TrainPhase::finetune, "", cfg.finetune_lr_scale, step);
}

}  // namespace retinex
