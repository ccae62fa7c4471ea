#include "ibat/trainer.hpp"

#include <cmath>
#include <memory>

#include "ibat/csv.hpp"
#include "ibat/losses.hpp"
#include "ibat/mine.hpp"

namespace ibat {

void TrainConfig::validate() const {
    if (lambda < 0 || beta < 0) throw TensorError("train: lambda and beta must be nonnegative");
    if (batch < 1) throw TensorError("train: batch must be >= 1");
    if (epochs < 1) throw TensorError("train: epochs must be >= 1");
}

double TrainConfig::lr_at(int epoch) const {
    double v = lr;
    for (const auto& [e, factor] : lr_drops) {
        if (epoch >= e) v *= factor;
    }
    return v;
}

void TrainReport::write_csv(const std::string& path) const {
    auto out = open_csv(path, "epoch,clean_acc,robust_acc,mean_loss,comp_base,comp_reg,comp_outer");
    for (const auto& r : epochs) {
        out << r.epoch << ',' << fmt_double(r.clean_acc) << ',' << fmt_double(r.robust_acc) << ','
            << fmt_double(r.mean_loss) << ',' << fmt_double(r.comp_base) << ','
            << fmt_double(r.comp_reg) << ',' << fmt_double(r.comp_outer) << "\n";
    }
}

void sgd_step(std::vector<Param>& params, SgdState& state, double lr, double momentum,
              double weight_decay) {
    if (state.velocity.empty()) {
        for (auto& p : params) state.velocity.emplace_back(p.tensor.size(), 0.0);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& theta = params[i].tensor.mutable_values();
        const auto& g = params[i].tensor.grad();
        auto& v = state.velocity[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            if (!std::isfinite(g[j])) throw TensorError("sgd_step: non-finite gradient");
            v[j] = momentum * v[j] + g[j] + weight_decay * theta[j];
            theta[j] -= lr * v[j];
        }
    }
}

std::string objective_name(Objective o) {
    switch (o) {
        case Objective::plain_ce: return "plain_ce";
        case Objective::at: return "at";
        case Objective::trades: return "trades";
        case Objective::mart: return "mart";
        case Objective::mart_plus: return "mart_plus";
        case Objective::infoat: return "infoat";
    }
    throw TensorError("unknown objective");
}

Objective parse_objective(const std::string& s) {
    if (s == "plain_ce") return Objective::plain_ce;
    if (s == "at") return Objective::at;
    if (s == "trades") return Objective::trades;
    if (s == "mart") return Objective::mart;
    if (s == "mart_plus") return Objective::mart_plus;
    if (s == "infoat") return Objective::infoat;
    throw TensorError("unknown objective '" + s +
                      "'; valid: plain_ce, at, trades, mart, mart_plus, infoat");
}

namespace {

struct BatchLoss {
    Tensor total; // scalar
    double base = 0, reg = 0, outer = 0;
};

double accuracy(const Classifier& c, const LabeledDataset& ds) {
    if (ds.n == 0) return 0.0;
    auto pred = c.predict(ds.inputs, ds.n);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < ds.n; ++i) hit += pred[i] == ds.labels[i];
    return static_cast<double>(hit) / static_cast<double>(ds.n);
}

double probe_robust_accuracy(const Classifier& c, const LabeledDataset& ds, const TrainConfig& cfg,
                             std::uint64_t seed) {
    if (ds.n == 0) return 0.0;
    AttackConfig acfg = cfg.attack;
    acfg.steps = cfg.probe_attack_steps;
    acfg.lambda = 0.0;
    acfg.restarts = 1;
    std::mt19937_64 rng(seed);
    AdvResult adv = pgd(c, ds.inputs, ds.n, ds.labels, acfg, rng);
    std::size_t hit = 0;
    for (auto s : adv.success) hit += s == 0;
    return static_cast<double>(hit) / static_cast<double>(ds.n);
}

// Outer-loss builders. Every branch returns the full scalar objective for one
// batch; gradient flows through every term unless detach_nat_entropy is set.
BatchLoss outer_loss(const Classifier& c, const Batch& b, const std::vector<double>& x_adv,
                     const TrainConfig& cfg, double mine_weight) {
    const std::size_t m = b.m;
    Tensor xn = Tensor::leaf({m, c.input_dim()}, b.inputs, false);
    Tensor xa = Tensor::leaf({m, c.input_dim()}, x_adv, false);
    BatchLoss out;

    switch (cfg.objective) {
        case Objective::plain_ce: {
            Tensor ce = cross_entropy(softmax_probs(c.logits(xn)), b.labels);
            out.base = ce.item();
            out.total = ce;
            return out;
        }
        case Objective::at: {
            Tensor ce = cross_entropy(softmax_probs(c.logits(xa)), b.labels);
            out.base = ce.item();
            out.total = ce;
            return out;
        }
        case Objective::trades: {
            Tensor p_nat = softmax_probs(c.logits(xn));
            Tensor p_adv = softmax_probs(c.logits(xa));
            Tensor ce = cross_entropy(p_nat, b.labels);
            Tensor reg = mul(mean(kl_per_example(p_nat, p_adv)), cfg.lambda);
            out.base = ce.item();
            out.reg = reg.item();
            out.total = add(ce, reg);
            return out;
        }
        case Objective::mart:
        case Objective::mart_plus: {
            Tensor p_nat = softmax_probs(c.logits(xn));
            Tensor p_adv = softmax_probs(c.logits(xa));
            Tensor bce = boosted_cross_entropy(p_adv, b.labels);
            Tensor w = cfg.objective == Objective::mart
                           ? sub(Tensor::scalar(1.0), pick(p_nat, b.labels))
                           : entropy_per_example(p_nat);
            Tensor reg = mul(mean(mul(kl_per_example(p_nat, p_adv), w)), cfg.lambda);
            out.base = bce.item();
            out.reg = reg.item();
            out.total = add(bce, reg);
            return out;
        }
        case Objective::infoat: {
            const Ablation& abl = cfg.ablation;
            Tensor p_nat = softmax_probs(c.logits(xn));
            Tensor p_adv = softmax_probs(c.logits(xa));
            Tensor ce = cross_entropy(p_adv, b.labels);

            Tensor w;
            switch (abl.weighting) {
                case Weighting::entropy:
                    w = entropy_per_example(p_nat);
                    if (abl.detach_nat_entropy) w = Tensor::leaf(w.shape(), w.values(), false);
                    break;
                case Weighting::one_minus_p:
                    w = sub(Tensor::scalar(1.0), pick(p_nat, b.labels));
                    break;
                case Weighting::none:
                    w = Tensor::leaf({m}, std::vector<double>(m, 1.0), false);
                    break;
                case Weighting::mine:
                    w = Tensor::leaf({m}, std::vector<double>(m, mine_weight), false);
                    break;
            }
            Tensor reg = mul(mean(mul(w, divergence_per_example(abl.divergence, p_nat, p_adv))),
                             cfg.lambda);
            Tensor total = add(ce, reg);

            if (abl.outer_reg != OuterReg::none) {
                const bool on_adv = abl.outer_reg == OuterReg::minus_H_adv ||
                                    abl.outer_reg == OuterReg::plus_H_adv;
                const bool minus = abl.outer_reg == OuterReg::minus_H_adv ||
                                   abl.outer_reg == OuterReg::minus_H_nat;
                Tensor h = mul(mean(entropy_per_example(on_adv ? p_adv : p_nat)), cfg.beta);
                out.outer = (minus ? -1.0 : 1.0) * h.item();
                total = minus ? sub(total, h) : add(total, h);
            }
            out.base = ce.item();
            out.reg = reg.item();
            out.total = total;
            return out;
        }
    }
    throw TensorError("unknown objective");
}

} // namespace

TrainReport train(Classifier& c, const LabeledDataset& data, const LabeledDataset* probe,
                  const TrainConfig& cfg) {
    cfg.validate();
    if (data.n == 0) throw TensorError("train: empty dataset");

    // Independent streams so objectives that skip the attack still see the
    // same batch order.
    BatchIterator batches(data, cfg.batch, cfg.seed);
    std::mt19937_64 attack_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    std::mt19937_64 mine_rng(cfg.seed ^ 0x5851f42d4c957f2dull);

    std::unique_ptr<StatisticsNet> critic;
    const bool use_mine = cfg.objective == Objective::infoat &&
                          cfg.ablation.weighting == Weighting::mine;

    SgdState sgd;
    TrainReport report;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        if (epoch > 1) batches.new_epoch();
        const double lr = cfg.lr_at(epoch);
        double loss_sum = 0, base_sum = 0, reg_sum = 0, outer_sum = 0;
        std::size_t nbatches = 0;

        while (auto maybe = batches.next()) {
            const Batch& b = *maybe;

            double mine_weight = 0.0;
            if (use_mine && b.m >= 16) {
                if (!critic) {
                    const std::string tap = resolve_tap(c, cfg.ablation.mine_tap);
                    Tensor x0 = Tensor::leaf({b.m, c.input_dim()}, b.inputs, false);
                    const std::size_t zdim = c.forward(x0).tap(tap).size() / b.m;
                    critic = std::make_unique<StatisticsNet>(
                        std::min<std::size_t>(c.input_dim(), kMinePoolDim),
                        std::min<std::size_t>(zdim, kMinePoolDim), cfg.seed ^ 0x1234abcdull);
                }
                mine_weight = batch_mi_weight(c, *critic, b.inputs, b.m, cfg.ablation.mine_tap,
                                              cfg.ablation.mine_steps, mine_rng());
            }

            std::vector<double> x_adv = b.inputs;
            switch (cfg.objective) {
                case Objective::plain_ce:
                    break;
                case Objective::at:
                case Objective::mart:
                case Objective::mart_plus:
                    x_adv = pgd(c, b.inputs, b.m, b.labels, cfg.attack, attack_rng).x_adv;
                    break;
                case Objective::trades:
                    x_adv = trades_inner(c, b.inputs, b.m, cfg.attack, attack_rng).x_adv;
                    break;
                case Objective::infoat: {
                    AttackConfig acfg = cfg.attack;
                    acfg.lambda = cfg.lambda;
                    acfg.loss_kind = AttackLoss::info;
                    acfg.weighting = cfg.ablation.weighting;
                    acfg.divergence = cfg.ablation.divergence;
                    acfg.mine_weight = mine_weight;
                    x_adv = info_pgd(c, b.inputs, b.m, b.labels, acfg, attack_rng).x_adv;
                    break;
                }
            }

            c.zero_grads();
            BatchLoss loss = outer_loss(c, b, x_adv, cfg, mine_weight);
            if (!std::isfinite(loss.total.item())) {
                throw TensorError("train: non-finite loss at epoch " + std::to_string(epoch));
            }
            backward(loss.total);
            sgd_step(c.params(), sgd, lr, cfg.momentum, cfg.weight_decay);

            loss_sum += loss.total.item();
            base_sum += loss.base;
            reg_sum += loss.reg;
            outer_sum += loss.outer;
            ++nbatches;
        }

        EpochRow row;
        row.epoch = epoch;
        row.mean_loss = loss_sum / static_cast<double>(nbatches);
        row.comp_base = base_sum / static_cast<double>(nbatches);
        row.comp_reg = reg_sum / static_cast<double>(nbatches);
        row.comp_outer = outer_sum / static_cast<double>(nbatches);
        if (probe && probe->n > 0) {
            const LabeledDataset slice =
                probe->n > cfg.probe_size ? probe->slice(0, cfg.probe_size) : *probe;
            row.clean_acc = accuracy(c, slice);
            row.robust_acc = probe_robust_accuracy(c, slice, cfg, cfg.seed ^ (0xabcdull + epoch));
        }
        report.epochs.push_back(row);
    }
    return report;
}

} // namespace ibat
