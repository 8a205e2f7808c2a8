#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hdseg/losses.hpp"
#include "hdseg/net.hpp"
#include "hdseg/phantom.hpp"
#include "hdseg/trainer.hpp"

namespace hdseg {

struct ConfigKeyDef {
    const char* name;
    const char* default_value;
    const char* doc;
};

// Single source of truth for every tunable: the parser, --help text, and the
// resolved-config dump are all generated from this table.
const std::vector<ConfigKeyDef>& config_keys();

class RunConfig {
public:
    // All keys at their documented defaults.
    RunConfig();

    // "key = value" lines, '#' comments. Unknown keys are hard errors.
    static RunConfig from_text(const std::string& text,
                               const std::vector<std::pair<std::string, std::string>>& overrides = {});

    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;

    int get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    uint64_t get_u64(const std::string& key) const;
    std::vector<double> get_doubles(const std::string& key, size_t expected) const;

    // Sorted "key = value" dump; reparsing it reproduces this config.
    std::string to_text() const;

    NetConfig net_config() const;
    TrainConfig train_config() const;
    LossParams<float> loss_params() const;
    LossParams<double> loss_params_f64() const;
    PhantomConfig phantom_config() const;
    LossKind loss_kind() const;

private:
    std::map<std::string, std::string> values_;
};

LossKind parse_loss_kind(const std::string& name);
const char* loss_kind_name(LossKind kind);

}  // namespace hdseg
