#include "retinex/config.hpp"

#include <cctype>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "retinex/errors.hpp"

namespace retinex {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

double parse_number(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " has non-numeric value '" + value + "'");
    }
    if (pos != value.size())
        throw ConfigError("config key " + key + " has non-numeric value '" + value + "'");
    return v;
}

std::int64_t parse_integer(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    long long v = 0;
    try {
        v = std::stoll(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " has non-integer value '" + value + "'");
    }
    if (pos != value.size())
        throw ConfigError("config key " + key + " has non-integer value '" + value + "'");
    return v;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + " has non-integer value '" + value + "'");
    }
    if (pos != value.size() || (!value.empty() && value[0] == '-'))
        throw ConfigError("config key " + key + " has non-integer value '" + value + "'");
    return v;
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

}  // namespace

RunSettings parse_settings(const std::string& text) {
    RunSettings s;
    std::vector<std::string> unknown;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        std::string line = trim(raw);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              " is not of the form key = value: '" + line + "'");
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(line_no) + " has an empty key");

        if (key == "decom_depth") s.decom.depth = static_cast<int>(parse_integer(key, value));
        else if (key == "decom_width") s.decom.width = static_cast<int>(parse_integer(key, value));
        else if (key == "enhance_scales") s.enhance.num_scales = static_cast<int>(parse_integer(key, value));
        else if (key == "enhance_width") s.enhance.width = static_cast<int>(parse_integer(key, value));
        else if (key == "batch") s.train.batch = static_cast<int>(parse_integer(key, value));
        else if (key == "patch") s.train.patch = static_cast<int>(parse_integer(key, value));
        else if (key == "learning_rate") s.train.learning_rate = parse_number(key, value);
        else if (key == "lr_decay") s.train.lr_decay = parse_number(key, value);
        else if (key == "momentum") s.train.momentum = parse_number(key, value);
        else if (key == "finetune_lr_scale") s.train.finetune_lr_scale = parse_number(key, value);
        else if (key == "checkpoint_every") s.train.checkpoint_every = parse_integer(key, value);
        else if (key == "seed") s.train.seed = parse_unsigned(key, value);
        else if (key == "iterations_decom") s.iterations_decom = parse_integer(key, value);
        else if (key == "iterations_enhance") s.iterations_enhance = parse_integer(key, value);
        else if (key == "iterations_finetune") s.iterations_finetune = parse_integer(key, value);
        else if (key == "lambda_ir") s.train.loss_weights.lambda_ir = static_cast<float>(parse_number(key, value));
        else if (key == "lambda_is") s.train.loss_weights.lambda_is = static_cast<float>(parse_number(key, value));
        else if (key == "lambda_g") s.train.loss_weights.lambda_g = static_cast<float>(parse_number(key, value));
        else if (key == "lambda_recon_cross") {
            float v = static_cast<float>(parse_number(key, value));
            s.train.loss_weights.lambda_ij[0][1] = v;
            s.train.loss_weights.lambda_ij[1][0] = v;
        } else unknown.push_back(key);
    }
    if (!unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const std::string& k : unknown) msg += " " + k;
        throw ConfigError(msg);
    }
    return s;
}

std::string serialize_settings(const RunSettings& s) {
    std::ostringstream out;
    out << "# networks\n";
    out << "decom_depth = " << s.decom.depth << "\n";
    out << "decom_width = " << s.decom.width << "\n";
    out << "enhance_scales = " << s.enhance.num_scales << "\n";
    out << "enhance_width = " << s.enhance.width << "\n";
    out << "# optimization\n";
    out << "batch = " << s.train.batch << "\n";
    out << "patch = " << s.train.patch << "\n";
    out << "learning_rate = " << format_number(s.train.learning_rate) << "\n";
    out << "lr_decay = " << format_number(s.train.lr_decay) << "\n";
    out << "momentum = " << format_number(s.train.momentum) << "\n";
    out << "finetune_lr_scale = " << format_number(s.train.finetune_lr_scale) << "\n";
    out << "checkpoint_every = " << s.train.checkpoint_every << "\n";
    out << "seed = " << s.train.seed << "\n";
    out << "iterations_decom = " << s.iterations_decom << "\n";
    out << "iterations_enhance = " << s.iterations_enhance << "\n";
    out << "iterations_finetune = " << s.iterations_finetune << "\n";
    out << "# loss weights\n";
    out << "lambda_ir = " << format_number(s.train.loss_weights.lambda_ir) << "\n";
    out << "lambda_is = " << format_number(s.train.loss_weights.lambda_is) << "\n";
    out << "lambda_g = " << format_number(s.train.loss_weights.lambda_g) << "\n";
    out << "lambda_recon_cross = " << format_number(s.train.loss_weights.lambda_ij[0][1]) << "\n";
    return out.str();
}

RunSettings load_settings(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_settings(buf.str());
}

void save_settings(const RunSettings& settings, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << serialize_settings(settings);
    if (!out) throw IoError("failed to write " + path);
}

TrainConfig phase_config(const RunSettings& settings, TrainPhase phase) {
    TrainConfig cfg = settings.train;
    cfg.phase = phase;
    switch (phase) {
        case TrainPhase::decom: cfg.iterations = settings.iterations_decom; break;
        case TrainPhase::enhance: cfg.iterations = settings.iterations_enhance; break;
        case TrainPhase::finetune: cfg.iterations = settings.iterations_finetune; break;
    }
    return cfg;
}

}  // namespace retinex
