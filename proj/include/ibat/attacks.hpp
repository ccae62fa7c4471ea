#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "ibat/losses.hpp"
#include "ibat/model.hpp"

namespace ibat {

enum class AttackLoss { ce, kl_trades, cw_margin, info };

struct AttackConfig {
    double epsilon = 8.0 / 255.0;
    int steps = 10;
    double step_size = (8.0 / 255.0) / 4.0;
    bool random_start = true;
    double lambda = 0.0; // info regularization weight
    int restarts = 1;
    AttackLoss loss_kind = AttackLoss::ce;
    Weighting weighting = Weighting::entropy;
    Divergence divergence = Divergence::mse;
    double mine_weight = 0.0; // batch-level weight, used when weighting == mine
    // SPSA settings (forward-only black box)
    std::size_t spsa_batch = 128;
    double spsa_lr = 0.01;
    double spsa_delta = 0.001;
    int spsa_iters = 100;

    void validate() const;
};

struct AdvResult {
    std::vector<double> x_adv;        // B x d, inside the eps ball and [0,1] box
    std::vector<std::uint8_t> success; // prediction != true label
    std::vector<double> loss_trajectory; // mean attack loss per iterate (last restart)
};

AdvResult fgsm(const Classifier& c, const std::vector<double>& x, std::size_t batch,
               const std::vector<int>& y, const AttackConfig& cfg);

// Sign-of-gradient ascent with ball projection then box clip after every step.
// Returns the best-loss iterate per example; with restarts > 1 the restart with
// the highest per-example loss wins.
AdvResult pgd(const Classifier& c, const std::vector<double>& x, std::size_t batch,
              const std::vector<int>& y, const AttackConfig& cfg, std::mt19937_64& rng);

// Maximizes KL(p(x) || p(x')) with the clean branch frozen.
AdvResult trades_inner(const Classifier& c, const std::vector<double>& x, std::size_t batch,
                       const AttackConfig& cfg, std::mt19937_64& rng);

// Maximizes CE(p(x'), y) + lambda * w(x) * D(p(x'), p(x)), with the clean-input
// weight and distribution computed once before the loop and held constant.
AdvResult info_pgd(const Classifier& c, const std::vector<double>& x, std::size_t batch,
                   const std::vector<int>& y, const AttackConfig& cfg, std::mt19937_64& rng);

// Margin loss max_{k != y} z_k - z_y on logits.
AdvResult cw_pgd(const Classifier& c, const std::vector<double>& x, std::size_t batch,
                 const std::vector<int>& y, const AttackConfig& cfg, std::mt19937_64& rng);

// Gradient-free attack: simultaneous Rademacher probes, sign ascent, early stop
// per example on misclassification.
AdvResult spsa(const Classifier& c, const std::vector<double>& x, std::size_t batch,
               const std::vector<int>& y, const AttackConfig& cfg,
               std::size_t spsa_batch, double lr, double delta, int iterations,
               std::mt19937_64& rng);

// Smallest eps in [0, eps_max] at which pgd (fixed steps, alpha = eps/4,
// 3 restarts) succeeds, located by bisection to within tol. nullopt means the
// example resisted attack at eps_max; 0 means it was already misclassified.
std::optional<double> min_perturbation(const Classifier& c, const std::vector<double>& x, int y,
                                       double eps_max, double tol, std::mt19937_64& rng,
                                       int steps = 20);

// Clean-input regularization weight per example, from frozen probabilities.
std::vector<double> clean_weights(Weighting w, const Tensor& p_nat, const std::vector<int>& y,
                                  double mine_weight);

// Dispatch used by the eval harness and CLI.
AdvResult run_attack(const Classifier& c, const std::vector<double>& x, std::size_t batch,
                     const std::vector<int>& y, const AttackConfig& cfg, const std::string& kind,
                     std::mt19937_64& rng);

} // namespace ibat
