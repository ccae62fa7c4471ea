#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ibat/attacks.hpp"
#include "ibat/dataset.hpp"
#include "ibat/model.hpp"

namespace ibat {

enum class Objective { plain_ce, at, trades, mart, mart_plus, infoat };
enum class OuterReg { minus_H_adv, plus_H_adv, minus_H_nat, plus_H_nat, none };

struct Ablation {
    Weighting weighting = Weighting::entropy;
    Divergence divergence = Divergence::mse;
    OuterReg outer_reg = OuterReg::minus_H_adv;
    bool detach_nat_entropy = false;
    std::string mine_tap = "#1";
    int mine_steps = 5; // critic updates per batch when weighting == mine
};

struct TrainConfig {
    Objective objective = Objective::infoat;
    double lambda = 2.5;
    double beta = 0.2;
    int epochs = 10;
    std::size_t batch = 64;
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 3.5e-3;
    std::vector<std::pair<int, double>> lr_drops; // (epoch, factor)
    std::uint64_t seed = 0;
    AttackConfig attack;
    Ablation ablation;
    int probe_attack_steps = 10;
    std::size_t probe_size = 256;

    void validate() const;
    double lr_at(int epoch) const;
};

struct EpochRow {
    int epoch = 0;
    double clean_acc = 0, robust_acc = 0;
    double mean_loss = 0, comp_base = 0, comp_reg = 0, comp_outer = 0;
};

struct TrainReport {
    std::vector<EpochRow> epochs;
    void write_csv(const std::string& path) const;
};

struct SgdState {
    std::vector<std::vector<double>> velocity;
};

// v <- momentum*v + grad + weight_decay*theta; theta <- theta - lr*v
void sgd_step(std::vector<Param>& params, SgdState& state, double lr, double momentum,
              double weight_decay);

// Shared min-max loop; the objective selects the inner attack and outer loss.
// probe may be null (skips accuracy tracking).
TrainReport train(Classifier& c, const LabeledDataset& data, const LabeledDataset* probe,
                  const TrainConfig& cfg);

std::string objective_name(Objective o);
Objective parse_objective(const std::string& s);

} // namespace ibat
