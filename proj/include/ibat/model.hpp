#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "ibat/tensor.hpp"

namespace ibat {

struct ModelError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Param {
    std::string name;
    Tensor tensor; // leaf, requires_grad
};

struct Forward {
    Tensor logits; // (B, K)
    std::vector<std::pair<std::string, Tensor>> taps; // ordered, includes "input" and "logits"

    const Tensor& tap(const std::string& name) const;
};

// Small classifier: either an MLP or a two-block conv net, built from a
// descriptor string so checkpoints can reconstruct the architecture.
//   mlp:IN-H1-...-K          e.g. mlp:2-256-256-2
//   smallconv:CxHxW-C1-C2-K  e.g. smallconv:1x28x28-8-16-10
class Classifier {
public:
    static Classifier make(const std::string& descriptor, std::mt19937_64& rng);
    static Classifier reference_mlp(std::size_t input_dim, std::size_t classes, std::mt19937_64& rng);
    static Classifier small_conv(std::size_t channels, std::size_t h, std::size_t w,
                                 std::size_t classes, std::mt19937_64& rng);

    Forward forward(const Tensor& x) const; // x: (B, input_dim)
    Tensor logits(const Tensor& x) const { return forward(x).logits; }
    std::vector<int> predict(const std::vector<double>& inputs, std::size_t batch) const;

    const std::string& descriptor() const { return descriptor_; }
    std::size_t input_dim() const { return input_dim_; }
    std::size_t num_classes() const { return num_classes_; }
    std::vector<Param>& params() { return params_; }
    const std::vector<Param>& params() const { return params_; }
    Param& param(const std::string& name);
    void zero_grads();
    // Ordered tap names, "input" first, "logits" last.
    std::vector<std::string> tap_names() const;

private:
    std::string descriptor_;
    bool conv_ = false;
    std::size_t input_dim_ = 0, num_classes_ = 0;
    std::size_t channels_ = 1, height_ = 1, width_ = 0;
    std::vector<std::size_t> dims_; // mlp layer widths incl. input and output
    std::size_t conv1_ = 0, conv2_ = 0;
    std::vector<Param> params_;

    void init_params(std::mt19937_64& rng);
    Tensor init_tensor(Shape shape, std::size_t fan_in, std::mt19937_64& rng);
};

// Stabilized softmax over logits rows; rows land in the simplex within 1e-12.
Tensor softmax_probs(const Tensor& logits);

// Argmax with lowest-index tie break.
std::vector<int> argmax_rows(const Tensor& t);

} // namespace ibat
