#include "ibat/config.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <fstream>
#include <sstream>

namespace ibat {

namespace {

struct SchemaEntry {
    const char* key;
    const char* def;
};

// Declaration order doubles as the echo order.
const SchemaEntry kSchema[] = {
    {"data.kind", "moons"},
    {"data.n", "400"},
    {"data.noise", "0.15"},
    {"data.seed", "1"},
    {"data.images", ""},
    {"data.labels", ""},
    {"data.test_images", ""},
    {"data.test_labels", ""},
    {"data.path", ""},
    {"data.train_fraction", "0.8"},
    {"model.arch", ""},
    {"train.objective", "infoat"},
    {"train.lambda", "2.5"},
    {"train.beta", "0.2"},
    {"train.epochs", "10"},
    {"train.batch", "64"},
    {"train.lr", "0.1"},
    {"train.momentum", "0.9"},
    {"train.weight_decay", "0.0035"},
    {"train.lr_drops", ""}, // e.g. "30:0.1,36:0.1,40:0.1"
    {"train.seed", "0"},
    {"train.weighting", "entropy"},
    {"train.divergence", "mse"},
    {"train.outer_reg", "minus_H_adv"},
    {"train.detach_nat_entropy", "false"},
    {"train.mine_tap", "#1"},
    {"train.mine_steps", "5"},
    {"train.probe_size", "256"},
    {"train.probe_attack_steps", "10"},
    {"attack.epsilon", "8/255"},
    {"attack.steps", "10"},
    {"attack.step_size", "auto"}, // auto = epsilon / 4
    {"attack.random_start", "true"},
    {"attack.lambda", "0"},
    {"attack.restarts", "1"},
    {"attack.kinds", "fgsm,pgd20"},
    {"attack.spsa_batch", "128"},
    {"attack.spsa_lr", "0.01"},
    {"attack.spsa_delta", "0.001"},
    {"attack.spsa_iters", "100"},
    {"eval.eps_max", "0.5"},
    {"eval.tol", "0.001"},
    {"eval.grid", "21"},
    {"eval.magnitudes", "-1,-0.75,-0.5,-0.25,0,0.25,0.5,0.75,1"},
    {"eval.directions", "5"},
    {"eval.example_index", "0"},
    {"eval.max_examples", "200"},
    {"ablate.lambda_grid", "2.5"},
    {"ablate.beta_grid", "0.2"},
    {"ablate.weighting_grid", "entropy"},
    {"ablate.divergence_grid", "mse"},
    {"ablate.outer_reg_grid", "minus_H_adv"},
};

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, e - b + 1);
}

} // namespace

ConfigStore ConfigStore::defaults() {
    ConfigStore c;
    for (const auto& e : kSchema) {
        c.order_.push_back(e.key);
        c.values_[e.key] = e.def;
    }
    return c;
}

void ConfigStore::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[' && t.back() == ']') {
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (section.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": key outside any [section]");
        set(section + "." + key, value);
    }
}

void ConfigStore::set(const std::string& dotted_key, const std::string& value) {
    auto it = values_.find(dotted_key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + dotted_key);
    it->second = value;
}

const std::string& ConfigStore::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key: " + key);
    return it->second;
}

double ConfigStore::get_double(const std::string& key) const {
    try {
        std::size_t pos = 0;
        const double v = std::stod(get(key), &pos);
        if (pos != get(key).size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not a number: '" + get(key) + "'");
    }
}

double parse_eps(const std::string& s) {
    const auto slash = s.find('/');
    if (slash != std::string::npos) {
        const double num = std::stod(s.substr(0, slash));
        const double den = std::stod(s.substr(slash + 1));
        if (den == 0) throw ConfigError("epsilon fraction with zero denominator: " + s);
        return num / den;
    }
    return std::stod(s);
}

double ConfigStore::get_eps(const std::string& key) const {
    try {
        return parse_eps(get(key));
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": bad epsilon value '" + get(key) + "'");
    }
}

long ConfigStore::get_int(const std::string& key) const {
    try {
        return std::stol(get(key));
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not an integer: '" + get(key) + "'");
    }
}

std::uint64_t ConfigStore::get_u64(const std::string& key) const {
    try {
        return std::stoull(get(key));
    } catch (const std::exception&) {
        throw ConfigError("config key " + key + ": not an unsigned integer: '" + get(key) + "'");
    }
}

bool ConfigStore::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key " + key + ": not a boolean: '" + v + "'");
}

std::vector<std::string> ConfigStore::get_list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(get(key));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

std::string ConfigStore::resolved_text() const {
    std::ostringstream out;
    std::string section;
    for (const auto& key : order_) {
        const auto dot = key.find('.');
        const std::string sec = key.substr(0, dot);
        if (sec != section) {
            if (!section.empty()) out << "\n";
            out << "[" << sec << "]\n";
            section = sec;
        }
        out << key.substr(dot + 1) << " = " << values_.at(key) << "\n";
    }
    return out.str();
}

Weighting parse_weighting(const std::string& s) {
    if (s == "entropy") return Weighting::entropy;
    if (s == "one_minus_p") return Weighting::one_minus_p;
    if (s == "none") return Weighting::none;
    if (s == "mine") return Weighting::mine;
    throw ConfigError("unknown weighting '" + s + "'; valid: entropy, one_minus_p, none, mine");
}

Divergence parse_divergence(const std::string& s) {
    if (s == "mse") return Divergence::mse;
    if (s == "kl") return Divergence::kl;
    if (s == "js") return Divergence::js;
    if (s == "ce") return Divergence::ce;
    throw ConfigError("unknown divergence '" + s + "'; valid: mse, kl, js, ce");
}

OuterReg parse_outer_reg(const std::string& s) {
    if (s == "minus_H_adv") return OuterReg::minus_H_adv;
    if (s == "plus_H_adv") return OuterReg::plus_H_adv;
    if (s == "minus_H_nat") return OuterReg::minus_H_nat;
    if (s == "plus_H_nat") return OuterReg::plus_H_nat;
    if (s == "none") return OuterReg::none;
    throw ConfigError("unknown outer_reg '" + s +
                      "'; valid: minus_H_adv, plus_H_adv, minus_H_nat, plus_H_nat, none");
}

AttackConfig make_attack_config(const ConfigStore& cfg) {
    AttackConfig a;
    a.epsilon = cfg.get_eps("attack.epsilon");
    a.steps = static_cast<int>(cfg.get_int("attack.steps"));
    a.step_size = cfg.get("attack.step_size") == "auto" ? a.epsilon / 4.0
                                                        : parse_eps(cfg.get("attack.step_size"));
    a.random_start = cfg.get_bool("attack.random_start");
    a.lambda = cfg.get_double("attack.lambda");
    a.restarts = static_cast<int>(cfg.get_int("attack.restarts"));
    a.spsa_batch = static_cast<std::size_t>(cfg.get_int("attack.spsa_batch"));
    a.spsa_lr = cfg.get_double("attack.spsa_lr");
    a.spsa_delta = cfg.get_double("attack.spsa_delta");
    a.spsa_iters = static_cast<int>(cfg.get_int("attack.spsa_iters"));
    return a;
}

TrainConfig make_train_config(const ConfigStore& cfg) {
    TrainConfig t;
    t.objective = parse_objective(cfg.get("train.objective"));
    t.lambda = cfg.get_double("train.lambda");
    t.beta = cfg.get_double("train.beta");
    t.epochs = static_cast<int>(cfg.get_int("train.epochs"));
    t.batch = static_cast<std::size_t>(cfg.get_int("train.batch"));
    t.lr = cfg.get_double("train.lr");
    t.momentum = cfg.get_double("train.momentum");
    t.weight_decay = cfg.get_double("train.weight_decay");
    for (const auto& drop : cfg.get_list("train.lr_drops")) {
        const auto colon = drop.find(':');
        if (colon == std::string::npos)
            throw ConfigError("train.lr_drops entries must be epoch:factor, got '" + drop + "'");
        t.lr_drops.emplace_back(std::stoi(drop.substr(0, colon)), std::stod(drop.substr(colon + 1)));
    }
    t.seed = cfg.get_u64("train.seed");
    t.attack = make_attack_config(cfg);
    t.ablation.weighting = parse_weighting(cfg.get("train.weighting"));
    t.ablation.divergence = parse_divergence(cfg.get("train.divergence"));
    t.ablation.outer_reg = parse_outer_reg(cfg.get("train.outer_reg"));
    t.ablation.detach_nat_entropy = cfg.get_bool("train.detach_nat_entropy");
    t.ablation.mine_tap = cfg.get("train.mine_tap");
    t.ablation.mine_steps = static_cast<int>(cfg.get_int("train.mine_steps"));
    t.probe_size = static_cast<std::size_t>(cfg.get_int("train.probe_size"));
    t.probe_attack_steps = static_cast<int>(cfg.get_int("train.probe_attack_steps"));
    return t;
}

DataSplit load_data(const ConfigStore& cfg) {
    const std::string kind = cfg.get("data.kind");
    LabeledDataset all;
    DataSplit split;
    if (kind == "moons") {
        all = gen_two_moons(static_cast<std::size_t>(cfg.get_int("data.n")),
                            cfg.get_double("data.noise"), cfg.get_u64("data.seed"));
    } else if (kind == "idx") {
        split.train = load_idx(cfg.get("data.images"), cfg.get("data.labels"));
        if (!cfg.get("data.test_images").empty()) {
            split.test = load_idx(cfg.get("data.test_images"), cfg.get("data.test_labels"));
            return split;
        }
        all = std::move(split.train);
    } else if (kind == "cifar") {
        all = load_cifar_bin(cfg.get("data.path"));
    } else {
        throw ConfigError("unknown data.kind '" + kind + "'; valid: moons, idx, cifar");
    }
    const double frac = cfg.get_double("data.train_fraction");
    if (frac <= 0 || frac > 1) throw ConfigError("data.train_fraction must be in (0, 1]");
    // The sources above are class-ordered, so permute before splitting to keep
    // both halves label-balanced. Seeded: the split is part of the experiment.
    std::vector<std::size_t> perm(all.n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 rng(cfg.get_u64("data.seed") ^ 0x5bd1e995u);
    std::shuffle(perm.begin(), perm.end(), rng);
    LabeledDataset shuffled = all;
    for (std::size_t i = 0; i < all.n; ++i) {
        const std::size_t src = perm[i];
        std::copy_n(all.inputs.begin() + static_cast<long>(src * all.d), all.d,
                    shuffled.inputs.begin() + static_cast<long>(i * all.d));
        shuffled.labels[i] = all.labels[src];
    }
    const auto ntrain = static_cast<std::size_t>(static_cast<double>(all.n) * frac);
    split.train = shuffled.slice(0, ntrain);
    split.test = shuffled.slice(ntrain, all.n - ntrain);
    return split;
}

std::string resolve_arch(const ConfigStore& cfg, const LabeledDataset& data) {
    const std::string arch = cfg.get("model.arch");
    if (!arch.empty()) return arch;
    if (data.height > 1) {
        return "smallconv:" + std::to_string(data.channels) + "x" + std::to_string(data.height) +
               "x" + std::to_string(data.width) + "-8-16-" + std::to_string(data.num_classes);
    }
    return "mlp:" + std::to_string(data.d) + "-256-256-" + std::to_string(data.num_classes);
}

} // namespace ibat
