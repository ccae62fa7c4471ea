#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ibat {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);

struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {
struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;   // lazily allocated
    bool requires_grad = false;
    bool backward_done = false; // set on a node once it has been used as a backward root
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop; // accumulates this->grad into parents' grad
};
} // namespace detail

// Dense double tensor with a recorded reverse-mode trace. Value semantics via a
// shared node handle; graphs are built implicitly by the free-function ops below.
class Tensor {
public:
    Tensor() = default;

    static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->values.size(); }
    const std::vector<double>& values() const { return node_->values; }
    // In-place value edits are only meaningful on leaves (attack iterates, SGD updates).
    std::vector<double>& mutable_values();
    const std::vector<double>& grad() const;
    bool has_grad() const { return !node_->grad.empty(); }
    bool requires_grad() const { return node_->requires_grad; }
    void zero_grad();
    double item() const; // scalar tensors only

    detail::Node* node() const { return node_.get(); }
    std::shared_ptr<detail::Node> handle() const { return node_; }

    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// Elementwise; shapes must match exactly or one operand must be a single element.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor vexp(const Tensor& a);
Tensor vlog(const Tensor& a); // requires strictly positive input
Tensor relu(const Tensor& a);
// Subgradient 0 outside (lo, hi) and at the kinks. hi may be +inf.
Tensor clamp(const Tensor& a, double lo, double hi);

Tensor add(const Tensor& a, double c);
Tensor mul(const Tensor& a, double c);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return mul(a, c); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor matmul(const Tensor& a, const Tensor& b); // rank-2 only
Tensor add_rowvec(const Tensor& m, const Tensor& v); // (B,K) + (K,) broadcast over rows

Tensor sum(const Tensor& a);  // scalar
Tensor mean(const Tensor& a); // scalar
Tensor row_sum(const Tensor& a);     // (B,K) -> (B,)
Tensor row_softmax(const Tensor& a); // (B,K) -> (B,K), max-subtracted
Tensor pick(const Tensor& a, const std::vector<int>& cols);              // (B,K) -> (B,), a[i, cols[i]]
Tensor row_max_excluding(const Tensor& a, const std::vector<int>& cols); // max over k != cols[i]
Tensor reshape(const Tensor& a, Shape shape);

// Naive conv, stride 1, zero padding. x: (B,C,H,W), w: (OC,C,KH,KW), bias: (OC,)
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t pad);
Tensor maxpool2(const Tensor& x); // 2x2, stride 2

// Populates grad buffers of every reachable tensor with requires_grad.
// A root may be differentiated once; a second backward without re-forward throws.
void backward(const Tensor& root);

// Max over coordinates of |analytic - central difference| / (|analytic| + 1e-8).
double finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                         const std::vector<double>& x,
                         const std::vector<double>& analytic,
                         double h);

inline double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

} // namespace ibat
