#include "ibat/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "ibat/losses.hpp"

namespace ibat {

void AttackConfig::validate() const {
    if (epsilon < 0) throw TensorError("attack: epsilon must be nonnegative");
    if (steps < 1) throw TensorError("attack: steps must be >= 1");
    if (restarts < 1) throw TensorError("attack: restarts must be >= 1");
    if (step_size < 0 || step_size > 2.0 * epsilon + 1e-15)
        throw TensorError("attack: step size outside [0, 2*eps]");
    if (lambda < 0) throw TensorError("attack: lambda must be nonnegative");
}

namespace {

// Per-example attack loss on a gradient-tracked input leaf.
using LossBuilder = std::function<Tensor(const Tensor& x_leaf)>;

void project(std::vector<double>& xp, const std::vector<double>& x, double eps) {
    for (std::size_t i = 0; i < xp.size(); ++i) {
        xp[i] = std::min(std::max(xp[i], x[i] - eps), x[i] + eps);
        xp[i] = std::min(std::max(xp[i], 0.0), 1.0);
    }
}

std::vector<std::uint8_t> success_mask(const Classifier& c, const std::vector<double>& x_adv,
                                       std::size_t batch, const std::vector<int>& y) {
    auto pred = c.predict(x_adv, batch);
    std::vector<std::uint8_t> out(batch);
    for (std::size_t i = 0; i < batch; ++i) out[i] = pred[i] != y[i] ? 1 : 0;
    return out;
}

AdvResult pgd_core(const Classifier& c, const std::vector<double>& x, std::size_t batch,
                   const std::vector<int>& y, const AttackConfig& cfg, std::mt19937_64& rng,
                   const LossBuilder& builder) {
    cfg.validate();
    const std::size_t d = c.input_dim();
    if (x.size() != batch * d) throw TensorError("attack: input size does not match batch");

    AdvResult result;
    result.x_adv = x;
    std::vector<double> global_best_loss(batch, -std::numeric_limits<double>::infinity());

    for (int r = 0; r < cfg.restarts; ++r) {
        std::vector<double> xp = x;
        if (cfg.random_start) {
            std::uniform_real_distribution<double> u(-1.0, 1.0);
            for (double& v : xp) v += cfg.epsilon * u(rng);
            project(xp, x, cfg.epsilon);
        }

        std::vector<double> best_loss(batch, -std::numeric_limits<double>::infinity());
        std::vector<double> best_x = xp;
        std::vector<double> traj;

        auto eval_only = [&](const std::vector<double>& pt) {
            Tensor leaf = Tensor::leaf({batch, d}, pt, false);
            return builder(leaf).values();
        };
        auto consider = [&](const std::vector<double>& pt, const std::vector<double>& loss) {
            for (std::size_t i = 0; i < batch; ++i) {
                if (loss[i] > best_loss[i]) {
                    best_loss[i] = loss[i];
                    std::copy_n(pt.begin() + static_cast<long>(i * d), d,
                                best_x.begin() + static_cast<long>(i * d));
                }
            }
        };

        for (int s = 0; s < cfg.steps; ++s) {
            Tensor leaf = Tensor::leaf({batch, d}, xp, true);
            Tensor loss_vec = builder(leaf);
            backward(sum(loss_vec));
            const auto& g = leaf.grad();
            for (double gv : g) {
                if (!std::isfinite(gv)) throw TensorError("attack: non-finite gradient");
            }
            const auto& lv = loss_vec.values();
            traj.push_back(std::accumulate(lv.begin(), lv.end(), 0.0) / static_cast<double>(batch));
            // The start point is not a candidate; only post-update iterates are,
            // which keeps the one-step no-start reduction identical to FGSM.
            if (s > 0) consider(xp, lv);
            for (std::size_t i = 0; i < xp.size(); ++i) xp[i] += cfg.step_size * sign0(g[i]);
            project(xp, x, cfg.epsilon);
        }
        const auto final_loss = eval_only(xp);
        traj.push_back(std::accumulate(final_loss.begin(), final_loss.end(), 0.0) /
                       static_cast<double>(batch));
        consider(xp, final_loss);

        for (std::size_t i = 0; i < batch; ++i) {
            if (best_loss[i] > global_best_loss[i]) {
                global_best_loss[i] = best_loss[i];
                std::copy_n(best_x.begin() + static_cast<long>(i * d), d,
                            result.x_adv.begin() + static_cast<long>(i * d));
            }
        }
        result.loss_trajectory = std::move(traj);
    }
    result.success = success_mask(c, result.x_adv, batch, y);
    return result;
}

LossBuilder ce_builder(const Classifier& c, const std::vector<int>& y) {
    return [&c, y](const Tensor& leaf) {
        Tensor probs = softmax_probs(c.logits(leaf));
        return neg(vlog(clamp(pick(probs, y), kProbFloor, 1.0)));
    };
}

} // namespace

// Clean-input weight per example, computed once with frozen probabilities.
std::vector<double> clean_weights(Weighting w, const Tensor& p_nat, const std::vector<int>& y,
                                  double mine_weight) {
    const std::size_t b = p_nat.shape()[0];
    switch (w) {
        case Weighting::entropy: return entropy_per_example(p_nat).values();
        case Weighting::one_minus_p: {
            auto py = pick(p_nat, y).values();
            for (double& v : py) v = 1.0 - v;
            return py;
        }
        case Weighting::none: return std::vector<double>(b, 1.0);
        case Weighting::mine: return std::vector<double>(b, mine_weight);
    }
    throw TensorError("unknown weighting");
}

AdvResult fgsm(const Classifier& c, const std::vector<double>& x, std::size_t batch,
               const std::vector<int>& y, const AttackConfig& cfg) {
    AttackConfig one = cfg;
    one.steps = 1;
    one.random_start = false;
    one.step_size = cfg.epsilon;
    one.restarts = 1;
    one.loss_kind = AttackLoss::ce;
    std::mt19937_64 unused(0);
    return pgd_core(c, x, batch, y, one, unused, ce_builder(c, y));
}

AdvResult pgd(const Classifier& c, const std::vector<double>& x, std::size_t batch,
              const std::vector<int>& y, const AttackConfig& cfg, std::mt19937_64& rng) {
    return pgd_core(c, x, batch, y, cfg, rng, ce_builder(c, y));
}

AdvResult trades_inner(const Classifier& c, const std::vector<double>& x, std::size_t batch,
                       const AttackConfig& cfg, std::mt19937_64& rng) {
    const std::size_t d = c.input_dim();
    Tensor x_const = Tensor::leaf({batch, d}, x, false);
    // Frozen clean distribution: values only, no gradient through this branch.
    Tensor p_raw = softmax_probs(c.logits(x_const));
    Tensor p_nat = Tensor::leaf(p_raw.shape(), p_raw.values(), false);
    auto builder = [&c, p_nat](const Tensor& leaf) {
        Tensor p_adv = softmax_probs(c.logits(leaf));
        return kl_per_example(p_nat, p_adv);
    };
    auto pred = c.predict(x, batch);
    return pgd_core(c, x, batch, pred, cfg, rng, builder);
}

AdvResult info_pgd(const Classifier& c, const std::vector<double>& x, std::size_t batch,
                   const std::vector<int>& y, const AttackConfig& cfg, std::mt19937_64& rng) {
    const std::size_t d = c.input_dim();
    Tensor x_const = Tensor::leaf({batch, d}, x, false);
    Tensor p_raw = softmax_probs(c.logits(x_const));
    Tensor p_nat = Tensor::leaf(p_raw.shape(), p_raw.values(), false);
    Tensor w_nat = Tensor::leaf({batch}, clean_weights(cfg.weighting, p_nat, y, cfg.mine_weight), false);
    const double lambda = cfg.lambda;
    auto builder = [&c, y, p_nat, w_nat, lambda, div = cfg.divergence](const Tensor& leaf) {
        Tensor p_adv = softmax_probs(c.logits(leaf));
        Tensor ce = neg(vlog(clamp(pick(p_adv, y), kProbFloor, 1.0)));
        Tensor reg = mul(mul(w_nat, divergence_per_example(div, p_nat, p_adv)), lambda);
        return add(ce, reg);
    };
    return pgd_core(c, x, batch, y, cfg, rng, builder);
}

AdvResult cw_pgd(const Classifier& c, const std::vector<double>& x, std::size_t batch,
                 const std::vector<int>& y, const AttackConfig& cfg, std::mt19937_64& rng) {
    auto builder = [&c, y](const Tensor& leaf) {
        Tensor z = c.logits(leaf);
        return sub(row_max_excluding(z, y), pick(z, y));
    };
    return pgd_core(c, x, batch, y, cfg, rng, builder);
}

AdvResult spsa(const Classifier& c, const std::vector<double>& x, std::size_t batch,
               const std::vector<int>& y, const AttackConfig& cfg,
               std::size_t spsa_batch, double lr, double delta, int iterations,
               std::mt19937_64& rng) {
    cfg.validate();
    const std::size_t d = c.input_dim();
    AdvResult result;
    result.x_adv = x;
    std::vector<double> xp = x;
    if (cfg.random_start) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (double& v : xp) v += cfg.epsilon * u(rng);
        project(xp, x, cfg.epsilon);
    }

    auto ce_values = [&](const std::vector<double>& pt) {
        Tensor leaf = Tensor::leaf({batch, d}, pt, false);
        Tensor probs = softmax_probs(c.logits(leaf));
        auto pv = pick(probs, y).values();
        for (double& p : pv) p = -std::log(std::max(p, kProbFloor));
        return pv;
    };

    std::vector<std::uint8_t> done(batch, 0);
    auto mark_done = [&]() {
        auto pred = c.predict(xp, batch);
        bool all = true;
        for (std::size_t i = 0; i < batch; ++i) {
            if (!done[i] && pred[i] != y[i]) {
                done[i] = 1; // early stop: freeze this example's iterate
                std::copy_n(xp.begin() + static_cast<long>(i * d), d,
                            result.x_adv.begin() + static_cast<long>(i * d));
            }
            all = all && done[i];
        }
        return all;
    };

    std::uniform_int_distribution<int> coin(0, 1);
    std::vector<double> probe_plus(batch * d), probe_minus(batch * d), rademacher(batch * d);
    for (int it = 0; it < iterations; ++it) {
        if (mark_done()) break;
        std::vector<double> grad(batch * d, 0.0);
        for (std::size_t p = 0; p < spsa_batch; ++p) {
            for (std::size_t i = 0; i < rademacher.size(); ++i)
                rademacher[i] = coin(rng) ? 1.0 : -1.0;
            for (std::size_t i = 0; i < xp.size(); ++i) {
                probe_plus[i] = xp[i] + delta * rademacher[i];
                probe_minus[i] = xp[i] - delta * rademacher[i];
            }
            auto lp = ce_values(probe_plus);
            auto lm = ce_values(probe_minus);
            for (std::size_t i = 0; i < batch; ++i) {
                const double scale = (lp[i] - lm[i]) / (2.0 * delta);
                for (std::size_t j = 0; j < d; ++j)
                    grad[i * d + j] += scale * rademacher[i * d + j];
            }
        }
        for (std::size_t i = 0; i < batch; ++i) {
            if (done[i]) continue;
            for (std::size_t j = 0; j < d; ++j)
                xp[i * d + j] += lr * sign0(grad[i * d + j] / static_cast<double>(spsa_batch));
        }
        project(xp, x, cfg.epsilon);
        auto l = ce_values(xp);
        result.loss_trajectory.push_back(std::accumulate(l.begin(), l.end(), 0.0) /
                                         static_cast<double>(batch));
    }
    for (std::size_t i = 0; i < batch; ++i) {
        if (!done[i])
            std::copy_n(xp.begin() + static_cast<long>(i * d), d,
                        result.x_adv.begin() + static_cast<long>(i * d));
    }
    result.success = success_mask(c, result.x_adv, batch, y);
    return result;
}

std::optional<double> min_perturbation(const Classifier& c, const std::vector<double>& x, int y,
                                       double eps_max, double tol, std::mt19937_64& rng,
                                       int steps) {
    if (c.predict(x, 1)[0] != y) return 0.0;
    auto succeeds = [&](double eps) {
        if (eps <= 0) return false;
        AttackConfig cfg;
        cfg.epsilon = eps;
        cfg.steps = steps;
        cfg.step_size = eps / 4.0;
        cfg.random_start = true;
        cfg.restarts = 3; // mitigates PGD non-monotonicity in the bisection
        AdvResult r = pgd(c, x, 1, {y}, cfg, rng);
        return r.success[0] != 0;
    };
    if (!succeeds(eps_max)) return std::nullopt;
    double lo = 0.0, hi = eps_max;
    while (hi - lo > tol) {
        const double mid = 0.5 * (lo + hi);
        if (succeeds(mid))
            hi = mid;
        else
            lo = mid;
    }
    return hi;
}

AdvResult run_attack(const Classifier& c, const std::vector<double>& x, std::size_t batch,
                     const std::vector<int>& y, const AttackConfig& cfg, const std::string& kind,
                     std::mt19937_64& rng) {
    if (kind == "fgsm") return fgsm(c, x, batch, y, cfg);
    if (kind == "pgd") return pgd(c, x, batch, y, cfg, rng);
    if (kind == "cw_pgd") return cw_pgd(c, x, batch, y, cfg, rng);
    if (kind == "info_pgd") return info_pgd(c, x, batch, y, cfg, rng);
    if (kind == "trades") return trades_inner(c, x, batch, cfg, rng);
    if (kind == "spsa")
        return spsa(c, x, batch, y, cfg, cfg.spsa_batch, cfg.spsa_lr, cfg.spsa_delta,
                    cfg.spsa_iters, rng);
    throw TensorError("unknown attack kind '" + kind +
                      "'; valid: fgsm, pgd, cw_pgd, info_pgd, trades, spsa");
}

} // namespace ibat
