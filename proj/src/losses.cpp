#include "ibat/losses.hpp"

#include <cmath>

namespace ibat {

void check_simplex(const Tensor& probs, double tol) {
    if (probs.shape().size() != 2) throw TensorError("check_simplex: rank-2 input required");
    const std::size_t b = probs.shape()[0], k = probs.shape()[1];
    for (std::size_t i = 0; i < b; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            const double p = probs.values()[i * k + j];
            if (p < -tol) throw TensorError("check_simplex: negative probability");
            s += p;
        }
        if (std::abs(s - 1.0) > tol) throw TensorError("check_simplex: row does not sum to 1");
    }
}

namespace {

void check_labels(const Tensor& probs, const std::vector<int>& labels) {
    const std::size_t b = probs.shape()[0], k = probs.shape()[1];
    if (labels.size() != b) throw TensorError("label count does not match batch");
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= k) throw TensorError("label out of range");
    }
}

} // namespace

Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    check_simplex(probs);
    check_labels(probs, labels);
    Tensor py = clamp(pick(probs, labels), kProbFloor, 1.0);
    return mean(neg(vlog(py)));
}

Tensor entropy_per_example(const Tensor& probs) {
    check_simplex(probs);
    Tensor pf = clamp(probs, kProbFloor, 1.0);
    return neg(row_sum(mul(probs, vlog(pf))));
}

Tensor kl_per_example(const Tensor& p, const Tensor& q) {
    check_simplex(p);
    check_simplex(q);
    Tensor lp = vlog(clamp(p, kProbFloor, 1.0));
    Tensor lq = vlog(clamp(q, kProbFloor, 1.0));
    return row_sum(mul(p, sub(lp, lq)));
}

Tensor mse_per_example(const Tensor& p, const Tensor& q) {
    Tensor d = sub(p, q);
    return row_sum(mul(d, d));
}

Tensor js_per_example(const Tensor& p, const Tensor& q) {
    Tensor m = mul(add(p, q), 0.5);
    return mul(add(kl_per_example(p, m), kl_per_example(q, m)), 0.5);
}

Tensor ce_div_per_example(const Tensor& p, const Tensor& q) {
    check_simplex(p);
    check_simplex(q);
    return neg(row_sum(mul(p, vlog(clamp(q, kProbFloor, 1.0)))));
}

Tensor boosted_cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    check_simplex(probs);
    check_labels(probs, labels);
    if (probs.shape()[1] < 2) throw TensorError("boosted_cross_entropy: needs K >= 2");
    Tensor py = clamp(pick(probs, labels), kProbFloor, 1.0 - kProbFloor);
    Tensor pmax = clamp(row_max_excluding(probs, labels), kProbFloor, 1.0 - kProbFloor);
    Tensor one_minus = sub(Tensor::scalar(1.0), pmax);
    return mean(sub(neg(vlog(py)), vlog(one_minus)));
}

Tensor divergence_per_example(Divergence div, const Tensor& p_nat, const Tensor& p_adv) {
    switch (div) {
        case Divergence::mse: return mse_per_example(p_adv, p_nat);
        case Divergence::kl: return kl_per_example(p_nat, p_adv);
        case Divergence::js: return js_per_example(p_nat, p_adv);
        case Divergence::ce: return ce_div_per_example(p_nat, p_adv);
    }
    throw TensorError("unknown divergence");
}

Tensor kl_divergence(const Tensor& p, const Tensor& q) { return mean(kl_per_example(p, q)); }
Tensor mse_distance(const Tensor& p, const Tensor& q) { return mean(mse_per_example(p, q)); }
Tensor js_divergence(const Tensor& p, const Tensor& q) { return mean(js_per_example(p, q)); }
Tensor ce_divergence(const Tensor& p, const Tensor& q) { return mean(ce_div_per_example(p, q)); }

} // namespace ibat
