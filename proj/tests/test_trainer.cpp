#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "hdseg/rng.hpp"
#include "hdseg/trainer.hpp"

using namespace hdseg;

namespace {

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const char* tag) {
        path = std::filesystem::temp_directory_path() /
               (std::string("hdseg_trainer_") + tag + "_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string dir(const std::string& name) const { return (path / name).string(); }
};

// small phantom set on disk, 32x32 slices so depth-3 nets fit
std::vector<CasePaths> make_dataset(const TempDir& tmp, int count, uint64_t seed) {
    PhantomConfig cfg;
    cfg.dims = {16, 32, 32};
    std::vector<CasePaths> cases;
    for (int i = 0; i < count; ++i) {
        cfg.seed = Rng::derive(seed, static_cast<uint64_t>(i)).next_u64();
        auto [vol, labels] = generate_phantom(cfg);
        CasePaths cp;
        cp.volume = tmp.dir("vol_" + std::to_string(i) + ".bvol");
        cp.labels = tmp.dir("lab_" + std::to_string(i) + ".bvol");
        write_bvol(cp.volume, vol);
        write_bvol(cp.labels, labels);
        cases.push_back(cp);
    }
    return cases;
}

TrainConfig small_train_config() {
    TrainConfig cfg;
    set_arch(cfg.net, "res-unet");
    cfg.net.depth = 3;
    cfg.net.base_width = 4;
    cfg.net.input_size = 32;
    cfg.batch_per_worker = 4;
    cfg.loss = LossKind::Hdice;
    cfg.seed = 17;
    return cfg;
}

std::string file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("lr_at staircase values") {
    TrainConfig cfg;
    CHECK(lr_at(0, cfg) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(lr_at(9999, cfg) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(lr_at(10000, cfg) == doctest::Approx(4.75e-5).epsilon(1e-12));
    CHECK(lr_at(25000, cfg) == doctest::Approx(4.5125e-5).epsilon(1e-12));
    // non-increasing
    double prev = lr_at(0, cfg);
    for (int64_t it = 0; it < 100000; it += 7777) {
        const double cur = lr_at(it, cfg);
        CHECK(cur <= prev + 1e-18);
        prev = cur;
    }
    CHECK_THROWS_AS(lr_at(-1, cfg), std::invalid_argument);
}

TEST_CASE("adam_step: zero gradient no-op, first-step magnitude, determinism") {
    {
        ParamStore<float> params;
        params.add("w", Tensor<float>::full({4}, 1.25f));
        GradMap grads;
        grads.emplace("w", Tensor<float>({4}));
        AdamState st;
        adam_step(params, grads, st, 1e-3f);
        for (size_t i = 0; i < 4; ++i) CHECK(params.get("w").value[i] == 1.25f);
    }
    {
        // constant gradient g=1: |delta| within 1e-6*lr of lr
        ParamStore<float> params;
        params.add("w", Tensor<float>({3}));
        GradMap grads;
        grads.emplace("w", Tensor<float>::full({3}, 1.0f));
        AdamState st;
        const float lr = 1e-3f;
        adam_step(params, grads, st, lr);
        for (size_t i = 0; i < 3; ++i)
            CHECK(std::abs(std::abs(params.get("w").value[i]) - lr) <= 1e-6f * lr);
        CHECK(st.t == 1);
    }
    {
        // bit-identical across runs
        auto run = []() {
            ParamStore<float> params;
            params.add("w", Tensor<float>::full({8}, 0.5f));
            AdamState st;
            Rng rng(3);
            for (int it = 0; it < 10; ++it) {
                GradMap grads;
                Tensor<float> g({8});
                for (size_t i = 0; i < 8; ++i) g[i] = static_cast<float>(rng.normal());
                grads.emplace("w", std::move(g));
                adam_step(params, grads, st, 1e-3f);
            }
            return params.get("w").value.vec();
        };
        CHECK(run() == run());
    }
    {
        ParamStore<float> params;
        params.add("w", Tensor<float>({2}));
        GradMap grads;
        grads.emplace("w", Tensor<float>({3}));
        AdamState st;
        CHECK_THROWS_WITH_AS(adam_step(params, grads, st, 1e-3f),
                             doctest::Contains("shape mismatch"), std::invalid_argument);
    }
}

TEST_CASE("ema_update examples") {
    ParamStore<float> params;
    params.add("w", Tensor<float>::full({2}, 1.0f));
    {
        GradMap shadow;
        shadow.emplace("w", Tensor<float>::full({2}, 1.0f));
        ema_update(shadow, params, 0.9999f);
        for (size_t i = 0; i < 2; ++i)
            CHECK(shadow.at("w")[i] == doctest::Approx(1.0f).epsilon(1e-6));
    }
    {
        GradMap shadow;
        shadow.emplace("w", Tensor<float>({2}));
        ema_update(shadow, params, 0.9999f);
        for (size_t i = 0; i < 2; ++i)
            CHECK(shadow.at("w")[i] == doctest::Approx(1e-4f).epsilon(1e-4));
    }
    {
        // geometric convergence toward the parameters
        GradMap shadow;
        shadow.emplace("w", Tensor<float>({2}));
        double prev_gap = 1.0;
        for (int it = 0; it < 50; ++it) {
            ema_update(shadow, params, 0.9f);
            const double gap = std::abs(1.0 - shadow.at("w")[0]);
            CHECK(gap <= prev_gap * 0.9 + 1e-7);
            prev_gap = gap;
        }
        CHECK(prev_gap < 0.01);
    }
}

TEST_CASE("average_gradients: mean, identity, no drift, validation") {
    auto grad_of = [](float v) {
        GradMap g;
        g.emplace("w", Tensor<float>::full({3}, v));
        return g;
    };
    {
        const GradMap mean = average_gradients({grad_of(1.0f), grad_of(2.0f), grad_of(3.0f)});
        for (size_t i = 0; i < 3; ++i) CHECK(mean.at("w")[i] == 2.0f);
    }
    {
        const GradMap one = average_gradients({grad_of(0.75f)});
        for (size_t i = 0; i < 3; ++i) CHECK(one.at("w")[i] == 0.75f);
    }
    for (float g : {1.0f, 2.0f, 0.5f, -4.0f}) {
        const GradMap same = average_gradients({grad_of(g), grad_of(g), grad_of(g)});
        for (size_t i = 0; i < 3; ++i) CHECK(same.at("w")[i] == g);
    }
    CHECK_THROWS_WITH_AS(average_gradients({}), doctest::Contains("empty"), std::invalid_argument);
    GradMap other;
    other.emplace("v", Tensor<float>::full({3}, 1.0f));
    CHECK_THROWS_AS(average_gradients({grad_of(1.0f), other}), std::invalid_argument);
}

TEST_CASE("W=3 threaded step equals the averaged per-worker gradients applied once") {
    TempDir tmp("wequiv");
    const auto manifest = make_dataset(tmp, 4, 77);
    TrainConfig cfg = small_train_config();
    cfg.max_iterations = 1;
    cfg.workers = 3;

    // manual route: sequential per-worker gradients on a fresh snapshot,
    // running stats from worker 0 only
    SlicePool pool = load_slice_pool(manifest);
    Network<float> manual_net = Network<float>::build(cfg.net, cfg.seed);
    std::vector<WorkerResult> results;
    for (int w = 0; w < 3; ++w) results.push_back(run_worker(manual_net, pool, cfg, 0, w));
    for (const auto& u : results[0].bn_updates) apply_bn_update(u);
    std::vector<GradMap> grads;
    for (auto& r : results) grads.push_back(std::move(r.grads));
    GradMap mean = average_gradients(grads);
    AdamState manual_adam;
    adam_step(manual_net.params(), mean, manual_adam, static_cast<float>(lr_at(0, cfg)));

    // threaded route through train()
    TrainResult res = train(cfg, manifest, "threaded", tmp.dir("run"));
    Checkpoint ck = read_checkpoint(res.final_checkpoint);

    for (const auto& [name, p] : manual_net.params()) {
        const Tensor<float>& theirs = ck.params.at(name);
        REQUIRE(theirs.same_shape(p.value));
        for (size_t i = 0; i < p.value.size(); ++i) {
            const float denom = std::max(1.0f, std::abs(p.value[i]));
            CHECK(std::abs(theirs[i] - p.value[i]) / denom <= 1e-5f);
        }
    }
}

TEST_CASE("W=1 training is bit-reproducible from the seed") {
    TempDir tmp("repro");
    const auto manifest = make_dataset(tmp, 3, 99);
    TrainConfig cfg = small_train_config();
    cfg.max_iterations = 5;
    train(cfg, manifest, "cfgtext", tmp.dir("a"));
    train(cfg, manifest, "cfgtext", tmp.dir("b"));
    CHECK(file_bytes(tmp.dir("a") + "/checkpoint_final.hnck") ==
          file_bytes(tmp.dir("b") + "/checkpoint_final.hnck"));
    CHECK(file_bytes(tmp.dir("a") + "/loss.csv") == file_bytes(tmp.dir("b") + "/loss.csv"));
}

TEST_CASE("max_iterations 0 leaves the checkpoint at initialization") {
    TempDir tmp("init");
    const auto manifest = make_dataset(tmp, 2, 5);
    TrainConfig cfg = small_train_config();
    cfg.max_iterations = 0;
    TrainResult res = train(cfg, manifest, "zero", tmp.dir("run"));
    Checkpoint ck = read_checkpoint(res.final_checkpoint);
    Network<float> fresh = Network<float>::build(cfg.net, cfg.seed);
    for (const auto& [name, p] : fresh.params()) {
        const Tensor<float>& stored = ck.params.at(name);
        CHECK(stored.vec() == p.value.vec());
    }
    CHECK(ck.iteration == 0);
    CHECK(ck.adam_t == 0);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    TempDir tmp("ck");
    const auto manifest = make_dataset(tmp, 2, 3);
    TrainConfig cfg = small_train_config();
    cfg.max_iterations = 3;
    TrainResult res = train(cfg, manifest, "roundtrip config\nkey = value\n", tmp.dir("run"));

    Checkpoint ck = read_checkpoint(res.final_checkpoint);
    const std::string second = tmp.dir("rewritten.hnck");
    write_checkpoint(second, ck);
    CHECK(file_bytes(res.final_checkpoint) == file_bytes(second));
    CHECK(ck.config_text == "roundtrip config\nkey = value\n");
    CHECK(ck.iteration == 3);
}

TEST_CASE("resumed training continues the loss trace exactly") {
    TempDir tmp("resume");
    const auto manifest = make_dataset(tmp, 3, 41);
    TrainConfig cfg = small_train_config();

    cfg.max_iterations = 12;
    train(cfg, manifest, "full", tmp.dir("full"));

    TrainConfig half = cfg;
    half.max_iterations = 6;
    half.checkpoint_every = 6;
    // cadence checkpoints are only written before the final iteration; run to
    // 6 and resume from the final checkpoint of the short run
    train(half, manifest, "full", tmp.dir("half"));
    TrainConfig rest = cfg;
    TrainResult resumed = train(rest, manifest, "full", tmp.dir("resumed"),
                                tmp.dir("half") + "/checkpoint_final.hnck");
    CHECK(resumed.history.size() == 6);  // iterations 6..11
    CHECK(resumed.history.front().iteration == 6);

    CHECK(file_bytes(tmp.dir("full") + "/checkpoint_final.hnck") ==
          file_bytes(tmp.dir("resumed") + "/checkpoint_final.hnck"));
}

TEST_CASE("train rejects an empty or unfiltered-empty manifest") {
    TempDir tmp("empty");
    TrainConfig cfg = small_train_config();
    CHECK_THROWS_WITH_AS(train(cfg, {}, "x", tmp.dir("run")), doctest::Contains("empty"),
                         std::invalid_argument);

    // all-background volume filters to nothing
    Volume blank({8, 32, 32, 4});
    LabelVolume zeros({8, 32, 32});
    write_bvol(tmp.dir("v.bvol"), blank);
    write_bvol(tmp.dir("l.bvol"), zeros);
    CHECK_THROWS_WITH_AS(train(cfg, {{tmp.dir("v.bvol"), tmp.dir("l.bvol")}}, "x", tmp.dir("run2")),
                         doctest::Contains("empty data"), std::invalid_argument);
}

TEST_CASE("200-iteration hdice smoke run: late loss beats early loss") {
    TempDir tmp("smoke");
    const auto manifest = make_dataset(tmp, 16, 2025);
    TrainConfig cfg = small_train_config();
    cfg.max_iterations = 200;
    cfg.base_lr = 1e-3;  // desk-scale smoke budget
    TrainResult res = train(cfg, manifest, "smoke", tmp.dir("run"));
    REQUIRE(res.history.size() == 200);
    double first = 0, last = 0;
    for (int i = 0; i < 50; ++i) {
        first += res.history[static_cast<size_t>(i)].loss;
        last += res.history[static_cast<size_t>(150 + i)].loss;
    }
    CHECK(last / 50.0 < first / 50.0);
}
