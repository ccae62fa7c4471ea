#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ibat/model.hpp"

namespace ibat {

// Critic for the Donsker-Varadhan bound: MLP (dx+dz) -> width -> width -> 1.
class StatisticsNet {
public:
    StatisticsNet(std::size_t dx, std::size_t dz, std::uint64_t seed, std::size_t width = 64);

    Tensor scores(const Tensor& pairs) const; // (B, dx+dz) -> (B,)
    std::size_t dx() const { return dx_; }
    std::size_t dz() const { return dz_; }
    std::vector<Param>& params() { return params_; }

private:
    std::size_t dx_, dz_;
    std::vector<Param> params_;
};

// Maximizes E_joint[T] - log E_marginal[e^T] by Adam ascent on the critic;
// marginal pairs come from in-batch shuffling of zs. Returns the bound value
// averaged over the last 10 steps. Throws if the bound exceeds ln(n) + 1.
double mine_estimate(StatisticsNet& net, const std::vector<double>& xs,
                     const std::vector<double>& zs, std::size_t n,
                     int train_steps, std::uint64_t seed);

// Mean-pools each row of (n, d) down to at most target_dim coordinates.
std::vector<double> mean_pool_rows(const std::vector<double>& data, std::size_t n, std::size_t d,
                                   std::size_t target_dim);

// Batch-level MI weight shared by every example of the batch: I(x; z) at the
// chosen tap. tap accepts a tap name or "#k" for the k-th post-input tap.
double batch_mi_weight(const Classifier& c, StatisticsNet& net, const std::vector<double>& xs,
                       std::size_t batch, const std::string& tap, int train_steps,
                       std::uint64_t seed);

// Resolves "#k" against the classifier's ordered taps.
std::string resolve_tap(const Classifier& c, const std::string& tap);

inline constexpr std::size_t kMinePoolDim = 16;

} // namespace ibat
