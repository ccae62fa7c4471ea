#pragma once

#include <map>
#include <string>
#include <vector>

#include "ibat/dataset.hpp"
#include "ibat/trainer.hpp"

namespace ibat {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Plain-text config with bracketed sections of key = value lines. Every key is
// declared in the schema; unknown keys are errors. The fully resolved config
// (defaults + file + CLI overrides) can be echoed for provenance.
class ConfigStore {
public:
    static ConfigStore defaults();

    void load_file(const std::string& path);
    void set(const std::string& dotted_key, const std::string& value);

    const std::string& get(const std::string& dotted_key) const;
    double get_double(const std::string& key) const;
    double get_eps(const std::string& key) const; // accepts "8/255" fractions
    long get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<std::string> get_list(const std::string& key) const; // comma split

    std::string resolved_text() const;

private:
    std::vector<std::string> order_;
    std::map<std::string, std::string> values_;
};

double parse_eps(const std::string& s);

TrainConfig make_train_config(const ConfigStore& cfg);
AttackConfig make_attack_config(const ConfigStore& cfg);
Weighting parse_weighting(const std::string& s);
Divergence parse_divergence(const std::string& s);
OuterReg parse_outer_reg(const std::string& s);

struct DataSplit {
    LabeledDataset train;
    LabeledDataset test;
};
DataSplit load_data(const ConfigStore& cfg);

// Architecture descriptor from config; empty [model].arch picks the reference
// MLP for flat data and the small conv net for image data.
std::string resolve_arch(const ConfigStore& cfg, const LabeledDataset& data);

} // namespace ibat
