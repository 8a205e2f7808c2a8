#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "hdseg/bvol.hpp"
#include "hdseg/checkpoint.hpp"
#include "hdseg/cli.hpp"
#include "hdseg/config.hpp"

using namespace hdseg;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const char* tag) {
        path = std::filesystem::temp_directory_path() /
               (std::string("hdseg_cli_") + tag + "_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string dir(const std::string& name) const { return (path / name).string(); }
};

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// fast knobs shared by the CLI round-trip tests
std::vector<std::string> small_gen_args(const std::string& out, const std::string& seed = "1") {
    return {"gen",    "--out",  out,  "--count", "3",      "--dims",
            "16,32,32", "--seed", seed};
}

}  // namespace

TEST_CASE("RunConfig: defaults, file parsing, override precedence, unknown keys") {
    RunConfig defaults;
    CHECK(defaults.get("arch") == "res-unet");
    CHECK(defaults.get("loss") == "hdice");
    CHECK(defaults.get_double("lr") == doctest::Approx(5e-5));
    CHECK(defaults.get_int("lr_decay_every") == 10000);
    CHECK(defaults.get_double("ema_decay") == doctest::Approx(0.9999));
    CHECK(defaults.get_int("batch_per_worker") == 8);

    // empty file + no overrides -> all defaults
    const RunConfig empty = RunConfig::from_text("");
    CHECK(empty.to_text() == defaults.to_text());

    // file sets lr, override wins
    const RunConfig cfg = RunConfig::from_text("# comment line\nlr = 1e-4  # trailing\n",
                                               {{"lr", "5e-5"}});
    CHECK(cfg.get_double("lr") == doctest::Approx(5e-5));

    CHECK_THROWS_WITH_AS(RunConfig::from_text("no_such_key = 1\n"),
                         doctest::Contains("unknown config key: no_such_key"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(RunConfig::from_text("just a line without equals\n"),
                         doctest::Contains("expected 'key = value'"), std::invalid_argument);

    // validation names the offending key
    CHECK_THROWS_WITH_AS(RunConfig::from_text("class_weights = 0.3,0.3,0.3,0.3,0.3\n").loss_params(),
                         doctest::Contains("class_weights"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(RunConfig::from_text("input_size = 60\n").net_config(),
                         doctest::Contains("input_size"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(RunConfig::from_text("lr = banana\n").train_config(),
                         doctest::Contains("lr"), std::invalid_argument);
}

TEST_CASE("RunConfig: resolved text round-trips and captures the experiment cell") {
    const RunConfig cfg = RunConfig::from_text("", {{"loss", "hdice"}, {"arch", "res-unet"}});
    const std::string text = cfg.to_text();
    const RunConfig back = RunConfig::from_text(text);
    CHECK(back.to_text() == text);
    // the fingerprint pins the architecture/loss cell
    CHECK(text.find("arch = res-unet") != std::string::npos);
    CHECK(text.find("loss = hdice") != std::string::npos);
    CHECK(back.loss_kind() == LossKind::Hdice);
    CHECK(back.net_config().encoder == EncoderKind::ResidualUnet);
}

TEST_CASE("every config key appears in the resolved dump with its default") {
    const RunConfig cfg;
    const std::string text = cfg.to_text();
    for (const auto& key : config_keys()) {
        INFO(key.name);
        CHECK(text.find(std::string(key.name) + " = ") != std::string::npos);
    }
}

TEST_CASE("cli gen: writes volumes, manifest, resolved config; rerun is bit-identical") {
    TempDir tmp("gen");
    REQUIRE(cli::run(small_gen_args(tmp.dir("a"))) == 0);
    const auto manifest = read_manifest(tmp.dir("a") + "/manifest.tsv");
    REQUIRE(manifest.size() == 3);
    for (const auto& c : manifest) {
        CHECK(std::filesystem::exists(c.volume));
        CHECK(std::filesystem::exists(c.labels));
    }
    // resolved config reproduces the outputs bit-exactly
    REQUIRE(cli::run({"gen", "--out", tmp.dir("b"), "--config", tmp.dir("a") + "/config.resolved"}) ==
            0);
    for (int i = 0; i < 3; ++i) {
        const std::string name = "vol_00" + std::to_string(i) + ".bvol";
        CHECK(read_file(tmp.dir("a") + "/" + name) == read_file(tmp.dir("b") + "/" + name));
        const std::string lname = "lab_00" + std::to_string(i) + ".bvol";
        CHECK(read_file(tmp.dir("a") + "/" + lname) == read_file(tmp.dir("b") + "/" + lname));
    }
}

TEST_CASE("cli train/eval/report round trip on a tiny run") {
    TempDir tmp("roundtrip");
    REQUIRE(cli::run(small_gen_args(tmp.dir("data"))) == 0);
    REQUIRE(cli::run({"train", "--manifest", tmp.dir("data") + "/manifest.tsv", "--out",
                      tmp.dir("run"), "--iters", "2", "--input_size", "32", "--base_width", "4",
                      "--batch_per_worker", "2", "--loss", "hdice"}) == 0);
    CHECK(std::filesystem::exists(tmp.dir("run") + "/checkpoint_final.hnck"));
    CHECK(std::filesystem::exists(tmp.dir("run") + "/loss.csv"));
    CHECK(std::filesystem::exists(tmp.dir("run") + "/config.resolved"));

    // the checkpoint carries the resolved config
    const Checkpoint ck = read_checkpoint(tmp.dir("run") + "/checkpoint_final.hnck");
    CHECK(ck.config_text.find("arch = res-unet") != std::string::npos);
    CHECK(ck.iteration == 2);

    REQUIRE(cli::run({"eval", "--checkpoint", tmp.dir("run") + "/checkpoint_final.hnck",
                      "--manifest", tmp.dir("data") + "/manifest.tsv", "--out",
                      tmp.dir("scores.csv"), "--weights", "raw"}) == 0);
    const std::string csv = read_file(tmp.dir("scores.csv"));
    CHECK(csv.find("region,precision,recall,miou,dice\n") == 0);
    CHECK(csv.find("complete,") != std::string::npos);
    CHECK(csv.find("core,") != std::string::npos);
    CHECK(csv.find("enhancing,") != std::string::npos);

    REQUIRE(cli::run({"report", "--run", tmp.dir("run"), "--manifest",
                      tmp.dir("data") + "/manifest.tsv", "--volumes", "1", "--weights", "raw"}) == 0);
    CHECK(std::filesystem::exists(tmp.dir("run") + "/loss_curve.pgm"));
    CHECK(std::filesystem::exists(tmp.dir("run") + "/compare_v0.ppm"));
    const std::string ppm = read_file(tmp.dir("run") + "/compare_v0.ppm");
    CHECK(ppm.rfind("P6\n", 0) == 0);
}

TEST_CASE("cli: user errors exit nonzero without a stack trace") {
    TempDir tmp("errors");
    CHECK(cli::run({"train", "--manifest", tmp.dir("missing.tsv"), "--out", tmp.dir("run")}) == 1);
    CHECK(cli::run({"eval", "--checkpoint", tmp.dir("nope.hnck"), "--manifest",
                    tmp.dir("missing.tsv")}) == 1);
    CHECK(cli::run({"gen", "--out", tmp.dir("x"), "--count", "0"}) == 1);
    CHECK(cli::run({"gen", "--out", tmp.dir("y"), "--dims", "4,4"}) == 1);
    // unknown flag is a parse error with nonzero status
    CHECK(cli::run({"gen", "--out", tmp.dir("z"), "--frobnicate", "1"}) != 0);
}
