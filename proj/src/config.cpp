#include "hdseg/config.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace hdseg {

const std::vector<ConfigKeyDef>& config_keys() {
    static const std::vector<ConfigKeyDef> keys = {
        // architecture
        {"arch", "res-unet", "architecture: fcn8s-vgg | fcn8s-resnet | unet | res-unet"},
        {"depth", "3", "number of down-sampling stages"},
        {"base_width", "8", "channels at the first stage"},
        {"input_size", "64", "training slice extent; must be divisible by 2^depth"},
        {"skip_weights", "1,2,4", "skip-add branch weights, deepest stage first"},
        // training
        {"loss", "hdice", "loss: ce | wce | bootstrap | ss | dice | hdice"},
        {"lr", "5e-5", "Adam base learning rate"},
        {"lr_decay", "0.95", "staircase decay factor"},
        {"lr_decay_every", "10000", "iterations per decay step"},
        {"ema_decay", "0.9999", "parameter moving-average decay"},
        {"batch_per_worker", "8", "slices per worker per iteration"},
        {"workers", "1", "data-parallel worker count"},
        {"iters", "2000", "training iterations"},
        {"seed", "1", "run seed; batch draws depend only on (seed, worker, iteration)"},
        {"checkpoint_every", "0", "checkpoint cadence in iterations (0: final only)"},
        // loss parameters
        {"class_weights", "0.1,0.35,0.1,0.1,0.35", "weighted-CE class weights, must sum to 1"},
        {"bootstrap_t", "0.9", "bootstrap threshold; pixels with true-class prob >= t are dropped"},
        {"ss_lambda", "0.5", "sensitivity/specificity balance"},
        {"epsilon", "1e-5", "denominator guard for dice/ss losses"},
        {"hdice_weights", "0.333333,0.333333,0.333333", "weights of the three hierarchy levels"},
        {"standard_dsc", "false", "use the conventional 2TP dice instead of the two-sided form"},
        // phantom generation
        {"count", "16", "volumes to generate"},
        {"dims", "32,64,64", "volume extents D,H,W"},
        {"ratios", "2262,2,16,7,1", "target class-frequency ratios"},
        {"tumors", "1", "tumors per volume"},
        {"noise", "0.08", "intensity noise sigma"},
        {"means",
         "0.50,0.50,0.45,0.40,"
         "0.30,0.38,0.55,0.62,"
         "0.45,0.47,0.62,0.75,"
         "0.36,0.44,0.58,0.66,"
         "0.37,0.60,0.57,0.65",
         "per-class per-channel intensity means, 5x4 row-major (T1,T1c,T2,FLAIR)"},
        // evaluation
        {"classifier", "auto", "eval classifier: auto | argmax | hier"},
        {"weights", "ema", "eval weights: ema | raw"},
    };
    return keys;
}

RunConfig::RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("unknown config key: " + key);
    it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw std::invalid_argument("unknown config key: " + key);
    return it->second;
}

RunConfig RunConfig::from_text(const std::string& text,
                               const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) +
                                        ": expected 'key = value', got: " + line);
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    for (const auto& [k, v] : overrides) cfg.set(k, v);
    return cfg;
}

int RunConfig::get_int(const std::string& key) const {
    try {
        size_t pos = 0;
        const int v = std::stoi(get(key), &pos);
        if (pos != get(key).size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::invalid_argument("config key '" + key + "': not an integer: " + get(key));
    }
}

uint64_t RunConfig::get_u64(const std::string& key) const {
    try {
        size_t pos = 0;
        const uint64_t v = std::stoull(get(key), &pos);
        if (pos != get(key).size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::invalid_argument("config key '" + key + "': not an unsigned integer: " + get(key));
    }
}

double RunConfig::get_double(const std::string& key) const {
    try {
        size_t pos = 0;
        const double v = std::stod(get(key), &pos);
        if (pos != get(key).size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::invalid_argument("config key '" + key + "': not a number: " + get(key));
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config key '" + key + "': expected true/false, got: " + v);
}

std::vector<double> RunConfig::get_doubles(const std::string& key, size_t expected) const {
    std::vector<double> out;
    std::istringstream is(get(key));
    std::string item;
    while (std::getline(is, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (...) {
            throw std::invalid_argument("config key '" + key + "': not a number: " + item);
        }
    }
    if (out.size() != expected)
        throw std::invalid_argument("config key '" + key + "': expected " + std::to_string(expected) +
                                    " comma-separated values, got " + std::to_string(out.size()));
    return out;
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : values_) os << k << " = " << v << "\n";
    return os.str();
}

NetConfig RunConfig::net_config() const {
    NetConfig net;
    set_arch(net, get("arch"));
    net.depth = get_int("depth");
    net.base_width = get_int("base_width");
    net.input_size = get_int("input_size");
    const auto sw = get_doubles("skip_weights", 3);
    net.skip_weights = {sw[0], sw[1], sw[2]};
    if (net.depth < 1 || net.depth > 8) throw std::invalid_argument("config key 'depth': out of range");
    if (net.input_size % (1 << net.depth) != 0)
        throw std::invalid_argument("config key 'input_size': indivisible by 2^depth");
    return net;
}

LossKind parse_loss_kind(const std::string& name) {
    if (name == "ce") return LossKind::Ce;
    if (name == "wce") return LossKind::Wce;
    if (name == "bootstrap") return LossKind::Bootstrap;
    if (name == "ss") return LossKind::Ss;
    if (name == "dice") return LossKind::Dice;
    if (name == "hdice") return LossKind::Hdice;
    throw std::invalid_argument("unknown loss: " + name +
                                " (expected ce | wce | bootstrap | ss | dice | hdice)");
}

const char* loss_kind_name(LossKind kind) {
    switch (kind) {
        case LossKind::Ce: return "ce";
        case LossKind::Wce: return "wce";
        case LossKind::Bootstrap: return "bootstrap";
        case LossKind::Ss: return "ss";
        case LossKind::Dice: return "dice";
        default: return "hdice";
    }
}

LossKind RunConfig::loss_kind() const { return parse_loss_kind(get("loss")); }

namespace {

template <typename T>
LossParams<T> loss_params_impl(const RunConfig& cfg) {
    LossParams<T> p;
    const auto w = cfg.get_doubles("class_weights", 5);
    double sum = 0;
    for (size_t i = 0; i < 5; ++i) {
        p.class_weights[i] = static_cast<T>(w[i]);
        sum += w[i];
    }
    if (std::abs(sum - 1.0) > 1e-6)
        throw std::invalid_argument("config key 'class_weights': weights not summing to 1");
    p.bootstrap_t = static_cast<T>(cfg.get_double("bootstrap_t"));
    if (p.bootstrap_t <= T(0) || p.bootstrap_t > T(1))
        throw std::invalid_argument("config key 'bootstrap_t': must be in (0,1]");
    p.ss_lambda = static_cast<T>(cfg.get_double("ss_lambda"));
    if (p.ss_lambda < T(0) || p.ss_lambda > T(1))
        throw std::invalid_argument("config key 'ss_lambda': must be in [0,1]");
    p.epsilon = static_cast<T>(cfg.get_double("epsilon"));
    if (p.epsilon <= T(0)) throw std::invalid_argument("config key 'epsilon': must be positive");
    const auto hw = cfg.get_doubles("hdice_weights", 3);
    for (size_t i = 0; i < 3; ++i) p.hdice_weights[i] = static_cast<T>(hw[i]);
    p.standard_dsc = cfg.get_bool("standard_dsc");
    return p;
}

}  // namespace

LossParams<float> RunConfig::loss_params() const { return loss_params_impl<float>(*this); }
LossParams<double> RunConfig::loss_params_f64() const { return loss_params_impl<double>(*this); }

TrainConfig RunConfig::train_config() const {
    TrainConfig t;
    t.base_lr = get_double("lr");
    t.lr_decay = get_double("lr_decay");
    t.lr_decay_every = get_int("lr_decay_every");
    t.ema_decay = get_double("ema_decay");
    t.batch_per_worker = get_int("batch_per_worker");
    t.workers = get_int("workers");
    t.max_iterations = get_int("iters");
    t.loss = loss_kind();
    t.net = net_config();
    t.loss_params = loss_params();
    t.seed = get_u64("seed");
    t.checkpoint_every = get_int("checkpoint_every");
    if (t.base_lr <= 0 || t.base_lr > 1) throw std::invalid_argument("config key 'lr': out of range");
    if (t.lr_decay <= 0 || t.lr_decay > 1)
        throw std::invalid_argument("config key 'lr_decay': must be in (0,1]");
    if (t.lr_decay_every < 1)
        throw std::invalid_argument("config key 'lr_decay_every': must be >= 1");
    if (t.ema_decay <= 0 || t.ema_decay >= 1)
        throw std::invalid_argument("config key 'ema_decay': must be in (0,1)");
    if (t.workers < 1) throw std::invalid_argument("config key 'workers': must be >= 1");
    if (t.batch_per_worker < 1)
        throw std::invalid_argument("config key 'batch_per_worker': must be >= 1");
    if (t.max_iterations < 0) throw std::invalid_argument("config key 'iters': must be >= 0");
    return t;
}

PhantomConfig RunConfig::phantom_config() const {
    PhantomConfig p;
    p.seed = get_u64("seed");
    const auto d = get_doubles("dims", 3);
    p.dims = {static_cast<int>(d[0]), static_cast<int>(d[1]), static_cast<int>(d[2])};
    const auto r = get_doubles("ratios", 5);
    for (size_t i = 0; i < 5; ++i) {
        if (r[i] <= 0) throw std::invalid_argument("config key 'ratios': must be positive");
        p.class_ratios[i] = r[i];
    }
    p.tumors_per_volume = get_int("tumors");
    p.noise_sigma = get_double("noise");
    const auto m = get_doubles("means", 20);
    for (size_t c = 0; c < 5; ++c)
        for (size_t ch = 0; ch < 4; ++ch) p.intensity_means[c][ch] = m[c * 4 + ch];
    return p;
}

}  // namespace hdseg
