#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ibat/attacks.hpp"
#include "ibat/dataset.hpp"
#include "ibat/model.hpp"

namespace ibat {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Binary format: "IBAT" magic, u32 version, architecture descriptor string,
// config snapshot string, u64 seed, then named little-endian f64 arrays with
// u32 shape headers. Round-trips bit-exactly.
void save_checkpoint(const Classifier& c, const std::string& config_snapshot, std::uint64_t seed,
                     const std::string& path);
struct LoadedCheckpoint {
    Classifier model;
    std::string config_snapshot;
    std::uint64_t seed = 0;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

// Fraction of examples still classified correctly after the attack.
double robust_accuracy(const Classifier& c, const LabeledDataset& data, const AttackConfig& cfg,
                       const std::string& attack_kind, std::mt19937_64& rng,
                       std::size_t eval_batch = 128);

double clean_accuracy(const Classifier& c, const LabeledDataset& data);

struct EntropyProfile {
    std::vector<double> entropy;       // clean-input H(p(x)) per example
    std::vector<std::uint8_t> attacked; // PGD success flag per example
    double mean_gap = 0;               // mean H over non-robust minus over robust
    std::vector<std::size_t> bins_robust, bins_nonrobust;
    double bin_lo = 0, bin_hi = 0;
};
EntropyProfile entropy_robustness_profile(const Classifier& c, const LabeledDataset& data,
                                          const AttackConfig& cfg, std::mt19937_64& rng,
                                          std::size_t num_bins = 20);
void write_entropy_profile_csv(const EntropyProfile& p, const std::string& path);

struct MinPertProfile {
    std::vector<double> entropy;
    std::vector<std::optional<double>> min_eps; // nullopt = robust at eps_max
    double spearman = 0; // over non-sentinel rows
    std::size_t sentinel_count = 0;
};
MinPertProfile min_perturbation_profile(const Classifier& c, const LabeledDataset& data,
                                        double eps_max, double tol, std::mt19937_64& rng);
void write_minpert_profile_csv(const MinPertProfile& p, const std::string& path);

// CE loss over a (delta1, delta2) grid along the PGD direction v and a random
// direction r, both unit-L-inf scaled by eps.
struct LossSurface {
    std::size_t resolution = 0;
    std::vector<double> deltas;
    std::vector<double> loss; // row-major resolution x resolution
};
LossSurface input_loss_surface(const Classifier& c, const std::vector<double>& x, int y,
                               const AttackConfig& cfg, std::size_t resolution,
                               std::mt19937_64& rng);
void write_input_surface_csv(const LossSurface& s, const std::string& path);

// Adversarial CE along theta + delta*d for a filter-normalized random d;
// adversarial examples are regenerated at every displaced theta.
struct WeightSurface {
    std::vector<double> magnitudes;
    std::vector<double> loss; // averaged over directions
};
WeightSurface weight_loss_surface(Classifier& c, const LabeledDataset& batch,
                                  const std::vector<double>& magnitudes, std::size_t directions,
                                  const AttackConfig& cfg, std::mt19937_64& rng);
void write_weight_surface_csv(const WeightSurface& s, const std::string& path);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

// One-sided permutation test for mean(a) > mean(b); returns the p-value.
double permutation_test_greater(const std::vector<double>& a, const std::vector<double>& b,
                                std::size_t permutations, std::uint64_t seed);

} // namespace ibat
