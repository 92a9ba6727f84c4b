#include <doctest.h>

#include <filesystem>
#include <random>
#include <string>

#include "retinex/config.hpp"
#include "retinex/errors.hpp"

using namespace retinex;
namespace fs = std::filesystem;

namespace {

bool contains(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

std::string message_of(const std::string& text) {
    try {
        parse_settings(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_CASE("default settings serialize to the documented values") {
    std::string s = serialize_settings(RunSettings{});
    CHECK(contains(s, "batch = 16\n"));
    CHECK(contains(s, "patch = 96\n"));
    CHECK(contains(s, "lambda_ir = 0.001\n"));
    CHECK(contains(s, "lambda_is = 0.1\n"));
    CHECK(contains(s, "lambda_g = 10\n"));
    CHECK(contains(s, "lambda_recon_cross = 0.001\n"));
    CHECK(contains(s, "decom_depth = 5\n"));
    CHECK(contains(s, "decom_width = 64\n"));
    CHECK(contains(s, "enhance_scales = 3\n"));
    CHECK(contains(s, "enhance_width = 64\n"));
    CHECK(contains(s, "learning_rate = 0.001\n"));
    CHECK(contains(s, "lr_decay = 0.95\n"));
    CHECK(contains(s, "momentum = 0\n"));
    CHECK(contains(s, "finetune_lr_scale = 0.1\n"));
    CHECK(contains(s, "checkpoint_every = 500\n"));
    CHECK(contains(s, "seed = 0\n"));
    CHECK(contains(s, "iterations_decom = 2000\n"));
    CHECK(contains(s, "iterations_enhance = 2000\n"));
    CHECK(contains(s, "iterations_finetune = 1000\n"));
}

TEST_CASE("parse then serialize is a fixed point") {
    std::string s0 = serialize_settings(RunSettings{});
    std::string s1 = serialize_settings(parse_settings(s0));
    CHECK(s0 == s1);

    // Unusual values normalize on the first serialization and stay put.
    std::string custom =
        "learning_rate = 3e-4\n"
        "lr_decay = 0.123457\n"
        "momentum = 0.899999\n"
        "lambda_g = 7.25\n"
        "seed = 18446744073709551615\n"
        "iterations_decom = 1\n";
    std::string c1 = serialize_settings(parse_settings(custom));
    std::string c2 = serialize_settings(parse_settings(c1));
    CHECK(c1 == c2);
    CHECK(contains(c1, "learning_rate = 0.0003\n"));
    CHECK(contains(c1, "seed = 18446744073709551615\n"));
}

TEST_CASE("parse handles comments, blank lines, and spacing") {
    RunSettings s = parse_settings(
        "# a full-line comment\n"
        "\n"
        "   batch=3\n"
        "patch =  12   # trailing comment\n"
        "\tlambda_g\t=\t2.5\n");
    CHECK(s.train.batch == 3);
    CHECK(s.train.patch == 12);
    CHECK(s.train.loss_weights.lambda_g == 2.5f);
    CHECK(s.train.learning_rate == 0.001);  // untouched keys keep defaults
}

TEST_CASE("empty text parses to the defaults") {
    std::string a = serialize_settings(parse_settings(""));
    std::string b = serialize_settings(RunSettings{});
    CHECK(a == b);
}

TEST_CASE("later duplicate keys win") {
    RunSettings s = parse_settings("batch = 4\nbatch = 9\n");
    CHECK(s.train.batch == 9);
}

TEST_CASE("unknown keys are reported together") {
    std::string msg = message_of("batch = 2\nbogus_key = 1\npatch = 8\ntypo_rate = 0.5\n");
    CHECK(contains(msg, "unknown config keys"));
    CHECK(contains(msg, "bogus_key"));
    CHECK(contains(msg, "typo_rate"));
}

TEST_CASE("malformed values name the offending key") {
    CHECK(contains(message_of("learning_rate = fast\n"), "learning_rate"));
    CHECK(contains(message_of("batch = 3.5\n"), "batch"));
    CHECK(contains(message_of("seed = -1\n"), "seed"));
    CHECK(contains(message_of("lambda_g = 1.0x\n"), "lambda_g"));
    CHECK_THROWS_AS(parse_settings("just some words\n"), ConfigError);
    CHECK_THROWS_AS(parse_settings("= 5\n"), ConfigError);
}

TEST_CASE("phase_config selects the per-phase iteration budget") {
    RunSettings s;
    s.iterations_decom = 7;
    s.iterations_enhance = 5;
    s.iterations_finetune = 3;
    s.train.batch = 2;

    TrainConfig d = phase_config(s, TrainPhase::decom);
    CHECK(d.phase == TrainPhase::decom);
    CHECK(d.iterations == 7);
    CHECK(d.batch == 2);

    CHECK(phase_config(s, TrainPhase::enhance).iterations == 5);
    CHECK(phase_config(s, TrainPhase::finetune).iterations == 3);
    CHECK(phase_config(s, TrainPhase::finetune).phase == TrainPhase::finetune);
}

TEST_CASE("settings survive a file round trip") {
    fs::path dir = fs::temp_directory_path() / ("retinex_cfg_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    fs::path file = dir / "run.cfg";

    RunSettings s;
    s.train.batch = 5;
    s.train.seed = 99;
    s.decom.width = 16;
    s.iterations_finetune = 42;
    save_settings(s, file.string());
    RunSettings r = load_settings(file.string());
    CHECK(serialize_settings(r) == serialize_settings(s));

    CHECK_THROWS_AS(load_settings((dir / "absent.cfg").string()), IoError);
    fs::remove_all(dir);
}
