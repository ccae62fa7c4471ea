// Command-line front end: train | attack | diagnose | ablate.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ibat/config.hpp"
#include "ibat/csv.hpp"
#include "ibat/eval.hpp"
#include "ibat/trainer.hpp"

namespace fs = std::filesystem;
using namespace ibat;

namespace {

// Leftover "--section.key value" (or "--section.key=value") pairs become config
// overrides, so every schema field is reachable from the command line.
void apply_overrides(ConfigStore& cfg, const std::vector<std::string>& extras) {
    for (std::size_t i = 0; i < extras.size(); ++i) {
        std::string tok = extras[i];
        if (tok.rfind("--", 0) != 0 || tok.find('.') == std::string::npos)
            throw ConfigError("unexpected argument '" + tok +
                              "' (overrides look like --section.key value)");
        tok = tok.substr(2);
        const auto eq = tok.find('=');
        if (eq != std::string::npos) {
            cfg.set(tok.substr(0, eq), tok.substr(eq + 1));
        } else {
            if (i + 1 >= extras.size())
                throw ConfigError("override --" + tok + " is missing a value");
            cfg.set(tok, extras[++i]);
        }
    }
}

ConfigStore resolve_config(const std::string& config_path, const std::vector<std::string>& extras) {
    ConfigStore cfg = ConfigStore::defaults();
    if (!config_path.empty()) cfg.load_file(config_path);
    apply_overrides(cfg, extras);
    return cfg;
}

void echo_config(const ConfigStore& cfg, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream out(out_dir / "resolved.cfg", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (out_dir / "resolved.cfg").string());
    out << cfg.resolved_text();
}

LabeledDataset limited(const LabeledDataset& d, std::size_t max_examples) {
    if (d.n <= max_examples) return d;
    return d.slice(0, max_examples);
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::vector<std::string>& extras) {
    ConfigStore cfg = resolve_config(config_path, extras);
    echo_config(cfg, out_dir);
    DataSplit data = load_data(cfg);
    TrainConfig tc = make_train_config(cfg);
    tc.validate();
    std::mt19937_64 init_rng(tc.seed);
    Classifier model = Classifier::make(resolve_arch(cfg, data.train), init_rng);
    TrainReport report = train(model, data.train, &data.test, tc);
    report.write_csv((fs::path(out_dir) / "train_report.csv").string());
    save_checkpoint(model, cfg.resolved_text(), tc.seed,
                    (fs::path(out_dir) / "model.ckpt").string());
    return 0;
}

int cmd_attack(const std::string& ckpt_path, const std::string& config_path,
               const std::string& out_dir, const std::vector<std::string>& extras) {
    ConfigStore cfg = resolve_config(config_path, extras);
    echo_config(cfg, out_dir);
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
    DataSplit data = load_data(cfg);
    const LabeledDataset eval_set =
        limited(data.test, static_cast<std::size_t>(cfg.get_int("eval.max_examples")));
    AttackConfig base = make_attack_config(cfg);

    auto out = open_csv((fs::path(out_dir) / "eval_report.csv").string(),
                        "attack,epsilon,steps,robust_accuracy");
    out << "clean,0,0," << fmt_double(clean_accuracy(ckpt.model, eval_set)) << "\n";
    for (const std::string& kind : cfg.get_list("attack.kinds")) {
        // Kind specs carry an optional step count suffix: pgd20, cw40, infopgd10.
        std::string name = kind;
        AttackConfig a = base;
        auto digits = kind.find_first_of("0123456789");
        if (digits != std::string::npos && kind.substr(0, digits) != "") {
            const std::string head = kind.substr(0, digits);
            if (head == "pgd" || head == "cw" || head == "infopgd" || head == "trades") {
                name = head;
                a.steps = std::stoi(kind.substr(digits));
            }
        }
        if (name == "cw") name = "cw_pgd";
        if (name == "infopgd") name = "info_pgd";
        std::mt19937_64 rng(cfg.get_u64("train.seed") ^ 0x9e3779b97f4a7c15ull);
        const double acc = robust_accuracy(ckpt.model, eval_set, a, name, rng);
        out << name << "," << fmt_double(a.epsilon) << "," << (name == "fgsm" ? 1 : a.steps) << ","
            << fmt_double(acc) << "\n";
    }
    return 0;
}

int cmd_diagnose(const std::string& ckpt_path, const std::string& config_path,
                 const std::string& which, const std::string& out_dir,
                 const std::vector<std::string>& extras) {
    ConfigStore cfg = resolve_config(config_path, extras);
    echo_config(cfg, out_dir);
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_path);
    DataSplit data = load_data(cfg);
    const LabeledDataset eval_set =
        limited(data.test, static_cast<std::size_t>(cfg.get_int("eval.max_examples")));
    AttackConfig a = make_attack_config(cfg);
    std::mt19937_64 rng(cfg.get_u64("train.seed") ^ 0x9e3779b97f4a7c15ull);

    if (which == "entropy") {
        const EntropyProfile p = entropy_robustness_profile(ckpt.model, eval_set, a, rng);
        write_entropy_profile_csv(p, (fs::path(out_dir) / "entropy_profile.csv").string());
    } else if (which == "minpert") {
        const MinPertProfile p = min_perturbation_profile(
            ckpt.model, eval_set, cfg.get_eps("eval.eps_max"), cfg.get_double("eval.tol"), rng);
        write_minpert_profile_csv(p, (fs::path(out_dir) / "minpert_profile.csv").string());
    } else if (which == "surface_input") {
        const auto idx = static_cast<std::size_t>(cfg.get_int("eval.example_index"));
        if (idx >= eval_set.n) throw std::runtime_error("eval.example_index out of range");
        const LossSurface s =
            input_loss_surface(ckpt.model, eval_set.row(idx), eval_set.labels[idx], a,
                               static_cast<std::size_t>(cfg.get_int("eval.grid")), rng);
        write_input_surface_csv(s, (fs::path(out_dir) / "loss_surface_input.csv").string());
    } else if (which == "surface_weight") {
        std::vector<double> mags;
        for (const auto& m : cfg.get_list("eval.magnitudes")) mags.push_back(std::stod(m));
        const LabeledDataset batch = limited(eval_set, 64);
        const WeightSurface s =
            weight_loss_surface(ckpt.model, batch, mags,
                                static_cast<std::size_t>(cfg.get_int("eval.directions")), a, rng);
        write_weight_surface_csv(s, (fs::path(out_dir) / "loss_surface_weight.csv").string());
    } else {
        throw std::runtime_error("invalid --which '" + which +
                                 "'; valid: entropy, minpert, surface_input, surface_weight");
    }
    return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir,
               const std::vector<std::string>& extras) {
    ConfigStore cfg = resolve_config(config_path, extras);
    echo_config(cfg, out_dir);
    DataSplit data = load_data(cfg);

    auto out = open_csv((fs::path(out_dir) / "ablate_report.csv").string(),
                        "weighting,divergence,outer_reg,lambda,beta,clean_acc,robust_acc,status");
    for (const auto& w : cfg.get_list("ablate.weighting_grid"))
        for (const auto& dv : cfg.get_list("ablate.divergence_grid"))
            for (const auto& reg : cfg.get_list("ablate.outer_reg_grid"))
                for (const auto& lam : cfg.get_list("ablate.lambda_grid"))
                    for (const auto& bet : cfg.get_list("ablate.beta_grid")) {
                        out << w << "," << dv << "," << reg << "," << lam << "," << bet << ",";
                        try {
                            TrainConfig tc = make_train_config(cfg);
                            tc.ablation.weighting = parse_weighting(w);
                            tc.ablation.divergence = parse_divergence(dv);
                            tc.ablation.outer_reg = parse_outer_reg(reg);
                            tc.lambda = std::stod(lam);
                            tc.beta = std::stod(bet);
                            tc.validate();
                            std::mt19937_64 init_rng(tc.seed);
                            Classifier model =
                                Classifier::make(resolve_arch(cfg, data.train), init_rng);
                            train(model, data.train, nullptr, tc);
                            AttackConfig a = tc.attack;
                            a.steps = 20;
                            std::mt19937_64 rng(tc.seed ^ 0x9e3779b97f4a7c15ull);
                            out << fmt_double(clean_accuracy(model, data.test)) << ","
                                << fmt_double(robust_accuracy(model, data.test, a, "pgd", rng))
                                << ",ok\n";
                        } catch (const std::exception& e) {
                            // Cell isolation: record the failure and keep going.
                            std::string msg = e.what();
                            for (char& ch : msg)
                                if (ch == ',' || ch == '\n') ch = ';';
                            out << "nan,nan,error: " << msg << "\n";
                        }
                        out.flush();
                    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial-training laboratory: information-weighted robust training,"
                 " attacks, and diagnostics"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".", ckpt_path, which = "entropy";
    std::string eps_flag, kinds_flag, eps_max_flag;

    auto* t = app.add_subcommand("train", "Train a model and write checkpoint + report");
    t->add_option("--config", config_path, "Config file");
    t->add_option("--out", out_dir, "Output directory");
    t->allow_extras();

    auto* a = app.add_subcommand("attack", "Evaluate robust accuracy under attacks");
    a->add_option("--config", config_path, "Config file");
    a->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
    a->add_option("--out", out_dir, "Output directory");
    a->add_option("--kinds", kinds_flag, "Comma list, e.g. fgsm,pgd20,cw40,spsa");
    a->add_option("--eps", eps_flag, "Epsilon (decimal or fraction like 8/255)");
    a->allow_extras();

    auto* d = app.add_subcommand("diagnose", "Entropy/min-perturbation/loss-surface diagnostics");
    d->add_option("--config", config_path, "Config file");
    d->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
    d->add_option("--out", out_dir, "Output directory");
    d->add_option("--which", which, "entropy | minpert | surface_input | surface_weight");
    d->add_option("--eps-max", eps_max_flag, "Search ceiling for minpert");
    d->allow_extras();

    auto* ab = app.add_subcommand("ablate", "Run the configured training grid");
    ab->add_option("--config", config_path, "Config file");
    ab->add_option("--out", out_dir, "Output directory");
    ab->allow_extras();

    try {
        app.parse(argc, argv);
        CLI::App* sub = app.get_subcommands().at(0);
        std::vector<std::string> extras = sub->remaining();
        // Positional flags that shadow config keys fold into the override list.
        if (!eps_flag.empty()) { extras.push_back("--attack.epsilon"); extras.push_back(eps_flag); }
        if (!kinds_flag.empty()) { extras.push_back("--attack.kinds"); extras.push_back(kinds_flag); }
        if (!eps_max_flag.empty()) { extras.push_back("--eval.eps_max"); extras.push_back(eps_max_flag); }

        if (sub == t) return cmd_train(config_path, out_dir, extras);
        if (sub == a) return cmd_attack(ckpt_path, config_path, out_dir, extras);
        if (sub == d) return cmd_diagnose(ckpt_path, config_path, which, out_dir, extras);
        return cmd_ablate(config_path, out_dir, extras);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
