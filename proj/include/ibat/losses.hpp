#pragma once

#include <vector>

#include "ibat/tensor.hpp"

namespace ibat {

// All functions take softmax probability rows (B, K) on the simplex and stay
// inside the autodiff graph. Probabilities are floored at kProbFloor before any
// log so confident mispredictions cannot produce -inf.
inline constexpr double kProbFloor = 1e-12;

void check_simplex(const Tensor& probs, double tol = 1e-9);

// Mean over the batch of -log p_y.
Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels);

// Shannon entropy per example, (B,). 0*log 0 := 0.
Tensor entropy_per_example(const Tensor& probs);

// KL(p || q) per example, (B,). q floored.
Tensor kl_per_example(const Tensor& p, const Tensor& q);

// ||p - q||_2^2 per example, (B,).
Tensor mse_per_example(const Tensor& p, const Tensor& q);

// Jensen-Shannon per example, (B,).
Tensor js_per_example(const Tensor& p, const Tensor& q);

// -sum_k p_k log q_k per example, (B,).
Tensor ce_div_per_example(const Tensor& p, const Tensor& q);

// Boosted cross entropy: mean of -log p_y - log(1 - max_{k != y} p_k).
// Definition follows the MART training objective's BCE term.
Tensor boosted_cross_entropy(const Tensor& probs, const std::vector<int>& labels);

// Per-example regularizer knobs shared by the inner maximization and the outer
// objective ablations.
enum class Weighting { entropy, one_minus_p, none, mine };
enum class Divergence { mse, kl, js, ce };

// Distance between the clean and adversarial distributions, per example.
// Asymmetric divergences put the clean distribution first.
Tensor divergence_per_example(Divergence div, const Tensor& p_nat, const Tensor& p_adv);

// Scalar conveniences (batch means).
Tensor kl_divergence(const Tensor& p, const Tensor& q);
Tensor mse_distance(const Tensor& p, const Tensor& q);
Tensor js_divergence(const Tensor& p, const Tensor& q);
Tensor ce_divergence(const Tensor& p, const Tensor& q);

} // namespace ibat
