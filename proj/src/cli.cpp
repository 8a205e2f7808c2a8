#include "hdseg/cli.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "hdseg/config.hpp"
#include "hdseg/evalrun.hpp"
#include "hdseg/image_out.hpp"
#include "hdseg/phantom.hpp"
#include "hdseg/rng.hpp"
#include "hdseg/trainer.hpp"

namespace hdseg::cli {

namespace {

namespace fs = std::filesystem;

struct Common {
    std::string config_file;
    std::vector<std::pair<std::string, std::string>> overrides;

    RunConfig resolve() const {
        std::string text;
        if (!config_file.empty()) {
            std::ifstream f(config_file);
            if (!f) throw std::runtime_error("cannot open config file: " + config_file);
            std::ostringstream os;
            os << f.rdbuf();
            text = os.str();
        }
        return RunConfig::from_text(text, overrides);
    }
};

void attach_config_options(CLI::App* sub, Common& common) {
    sub->add_option("--config", common.config_file, "config file ('key = value' lines, '#' comments)");
    for (const auto& key : config_keys()) {
        const std::string name = key.name;
        sub->add_option_function<std::string>(
            "--" + name,
            [&common, name](const std::string& v) { common.overrides.emplace_back(name, v); },
            std::string(key.doc) + " [default: " + key.default_value + "]");
    }
}

void write_resolved(const RunConfig& cfg, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write resolved config: " + path);
    f << cfg.to_text();
}

std::string case_name(const char* stem, int i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%03d.bvol", stem, i);
    return buf;
}

int cmd_gen(const Common& common, const std::string& out_dir) {
    RunConfig cfg = common.resolve();
    PhantomConfig pcfg = cfg.phantom_config();
    const int count = cfg.get_int("count");
    if (count < 1) throw std::runtime_error("config key 'count': must be >= 1");

    fs::create_directories(out_dir);
    std::vector<CasePaths> cases;
    for (int i = 0; i < count; ++i) {
        PhantomConfig one = pcfg;
        one.seed = Rng::derive(pcfg.seed, static_cast<uint64_t>(i)).next_u64();
        auto [vol, labels] = generate_phantom(one);
        CasePaths cp;
        cp.volume = (fs::path(out_dir) / case_name("vol", i)).string();
        cp.labels = (fs::path(out_dir) / case_name("lab", i)).string();
        write_bvol(cp.volume, vol);
        write_bvol(cp.labels, labels);
        cases.push_back(std::move(cp));
    }
    const std::string manifest = (fs::path(out_dir) / "manifest.tsv").string();
    write_manifest(manifest, cases);
    write_resolved(cfg, (fs::path(out_dir) / "config.resolved").string());
    std::cout << "wrote " << count << " volume/label pairs and " << manifest << "\n";
    return 0;
}

int cmd_train(const Common& common, const std::string& manifest_path, const std::string& out_dir,
              const std::string& resume) {
    RunConfig cfg = common.resolve();
    TrainConfig tcfg = cfg.train_config();
    const auto manifest = read_manifest(manifest_path);
    fs::create_directories(out_dir);
    write_resolved(cfg, (fs::path(out_dir) / "config.resolved").string());
    TrainResult res = train(tcfg, manifest, cfg.to_text(), out_dir, resume);
    std::cout << "trained " << tcfg.max_iterations << " iterations ("
              << loss_kind_name(tcfg.loss) << ", " << arch_name(tcfg.net) << ", workers="
              << tcfg.workers << ")\n";
    if (res.skipped_steps > 0)
        std::cout << "note: " << res.skipped_steps << " fully-filtered steps skipped the update\n";
    if (!res.history.empty())
        std::cout << "final loss " << res.history.back().loss << "\n";
    std::cout << "checkpoint: " << res.final_checkpoint << "\n";
    return 0;
}

EvalOptions eval_options(const RunConfig& cfg) {
    EvalOptions opts;
    const std::string c = cfg.get("classifier");
    if (c == "auto")
        opts.classifier = ClassifierKind::Auto;
    else if (c == "argmax")
        opts.classifier = ClassifierKind::Argmax;
    else if (c == "hier")
        opts.classifier = ClassifierKind::Hierarchical;
    else
        throw std::runtime_error("config key 'classifier': expected auto | argmax | hier");
    const std::string w = cfg.get("weights");
    if (w == "ema")
        opts.weights = WeightsSource::Ema;
    else if (w == "raw")
        opts.weights = WeightsSource::Raw;
    else
        throw std::runtime_error("config key 'weights': expected ema | raw");
    return opts;
}

int cmd_eval(const Common& common, const std::string& checkpoint_path, const std::string& manifest_path,
             const std::string& out_file) {
    RunConfig cfg = common.resolve();
    const Checkpoint ck = read_checkpoint(checkpoint_path);
    const auto manifest = read_manifest(manifest_path);
    EvalOutput out = evaluate_checkpoint(ck, manifest, eval_options(cfg));
    const std::string csv = scores_csv(out.mean);
    std::cout << csv;
    if (!out_file.empty()) {
        std::ofstream f(out_file, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write scores: " + out_file);
        f << csv;
        write_resolved(cfg, out_file + ".config");
    }
    return 0;
}

int cmd_report(const Common& common, const std::string& run_dir, const std::string& manifest_path,
               std::string out_dir, int max_volumes) {
    RunConfig cfg = common.resolve();
    if (out_dir.empty()) out_dir = run_dir;
    fs::create_directories(out_dir);

    // loss curve from the run's history
    const std::string loss_path = (fs::path(run_dir) / "loss.csv").string();
    std::ifstream f(loss_path);
    if (!f) throw std::runtime_error("cannot open loss history: " + loss_path);
    std::vector<LossPoint> history;
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
        LossPoint p;
        if (std::sscanf(line.c_str(), "%ld,%lf,%lf", &p.iteration, &p.loss, &p.lr) == 3)
            history.push_back(p);
    }
    render_loss_curve((fs::path(out_dir) / "loss_curve.pgm").string(), history);

    // side-by-side truth/prediction maps
    const std::string ck_path = (fs::path(run_dir) / "checkpoint_final.hnck").string();
    const Checkpoint ck = read_checkpoint(ck_path);
    const auto manifest = read_manifest(manifest_path);
    const EvalOptions opts = eval_options(cfg);
    Network<float> net = network_from_checkpoint(ck, opts.weights);
    bool hierarchical = opts.classifier == ClassifierKind::Hierarchical;
    if (opts.classifier == ClassifierKind::Auto)
        hierarchical = RunConfig::from_text(ck.config_text).loss_kind() == LossKind::Hdice;

    const int volumes = std::min<int>(max_volumes, static_cast<int>(manifest.size()));
    for (int i = 0; i < volumes; ++i) {
        Volume vol = normalize(read_bvol_volume(manifest[static_cast<size_t>(i)].volume));
        LabelVolume truth = read_bvol_labels(manifest[static_cast<size_t>(i)].labels);
        LabelVolume pred = predict_labels(net, vol, hierarchical, opts.batch);
        // the slice with the most tumor is the informative one
        int best = 0;
        size_t best_count = 0;
        const size_t plane = static_cast<size_t>(truth.dim(1)) * truth.dim(2);
        for (int z = 0; z < truth.dim(0); ++z) {
            size_t c = 0;
            for (size_t j = 0; j < plane; ++j)
                if (truth[static_cast<size_t>(z) * plane + j] != 0) ++c;
            if (c > best_count) {
                best_count = c;
                best = z;
            }
        }
        render_slice_comparison(
            (fs::path(out_dir) / ("compare_v" + std::to_string(i) + ".ppm")).string(), truth, pred,
            best);
    }
    std::cout << "wrote loss_curve.pgm and " << volumes << " comparison image(s) to " << out_dir
              << "\n";
    return 0;
}

}  // namespace

int run(std::vector<std::string> args) {
    CLI::App app{"nested-region segmentation workbench: phantom generation, training, evaluation"};
    app.require_subcommand(1);

    Common common;
    std::string out_dir, manifest_path, checkpoint_path, resume, run_dir, out_file;
    int report_volumes = 3;

    CLI::App* gen = app.add_subcommand("gen", "generate synthetic phantom volumes and a manifest");
    gen->add_option("--out", out_dir, "output directory")->required();
    attach_config_options(gen, common);

    CLI::App* train_cmd = app.add_subcommand("train", "train a model on a manifest");
    train_cmd->add_option("--manifest", manifest_path, "training manifest")->required();
    train_cmd->add_option("--out", out_dir, "run output directory")->required();
    train_cmd->add_option("--resume", resume, "checkpoint to resume from");
    attach_config_options(train_cmd, common);

    CLI::App* eval_cmd = app.add_subcommand("eval", "score a checkpoint against a manifest");
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
    eval_cmd->add_option("--manifest", manifest_path, "evaluation manifest")->required();
    eval_cmd->add_option("--out", out_file, "also write the region-score CSV here");
    attach_config_options(eval_cmd, common);

    CLI::App* report = app.add_subcommand("report", "render loss curve and label-map comparisons");
    report->add_option("--run", run_dir, "training run directory (loss.csv, checkpoint_final.hnck)")
        ->required();
    report->add_option("--manifest", manifest_path, "manifest of volumes to render")->required();
    report->add_option("--out", out_file, "output directory (default: run directory)");
    report->add_option("--volumes", report_volumes, "number of volumes to render");
    attach_config_options(report, common);

    std::vector<const char*> argv;
    argv.push_back("hdseg");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen->parsed()) return cmd_gen(common, out_dir);
        if (train_cmd->parsed()) return cmd_train(common, manifest_path, out_dir, resume);
        if (eval_cmd->parsed()) return cmd_eval(common, checkpoint_path, manifest_path, out_file);
        if (report->parsed()) return cmd_report(common, run_dir, manifest_path, out_file, report_volumes);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace hdseg::cli
