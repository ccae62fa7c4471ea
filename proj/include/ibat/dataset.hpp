#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ibat {

struct DatasetError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Inputs live in [0,1]^d, row-major (n x d). channels/height/width describe the
// spatial layout for conv models; flat data keeps channels=1, height=1, width=d.
struct LabeledDataset {
    std::size_t n = 0;
    std::size_t d = 0;
    std::size_t num_classes = 0;
    std::size_t channels = 1, height = 1, width = 0;
    std::vector<double> inputs; // n * d
    std::vector<int> labels;    // n
    std::string name;

    std::vector<double> row(std::size_t i) const {
        return std::vector<double>(inputs.begin() + static_cast<long>(i * d),
                                   inputs.begin() + static_cast<long>((i + 1) * d));
    }
    LabeledDataset slice(std::size_t begin, std::size_t count) const;
};

// MNIST-format IDX pair: big-endian headers, magic 0x00000803 / 0x00000801.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path);

// CIFAR-10 binary batch: 3073-byte records (1 label byte + 3072 pixel bytes).
LabeledDataset load_cifar_bin(const std::string& path);

// Two interleaved half circles, affinely rescaled into [0,1]^2.
// First n/2 points are class 0, rest class 1.
LabeledDataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed);

struct Batch {
    std::vector<std::size_t> indices;
    std::vector<double> inputs; // m x d
    std::vector<int> labels;
    std::size_t m = 0;
};

// Seeded epoch permutation; one epoch visits every index exactly once.
class BatchIterator {
public:
    BatchIterator(const LabeledDataset& data, std::size_t batch_size, std::uint64_t seed);

    // nullopt once the epoch is exhausted; call new_epoch() to reshuffle.
    std::optional<Batch> next();
    void new_epoch();

private:
    const LabeledDataset& data_;
    std::size_t m_;
    std::mt19937_64 rng_;
    std::vector<std::size_t> perm_;
    std::size_t cursor_ = 0;
};

} // namespace ibat
