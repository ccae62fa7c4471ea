#include "ibat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace ibat {

std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

namespace {

using detail::Node;

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw TensorError(std::string("non-finite value produced by op '") + op + "'");
        }
    }
}

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> values,
                                std::vector<std::shared_ptr<Node>> parents,
                                const char* op) {
    check_finite(values, op);
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    for (auto& p : parents) {
        if (p->requires_grad) n->requires_grad = true;
    }
    if (n->requires_grad) n->parents = std::move(parents);
    return n;
}

void ensure_grad(Node* n) {
    if (n->grad.size() != n->values.size()) n->grad.assign(n->values.size(), 0.0);
}

} // namespace

Tensor Tensor::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != values.size()) throw TensorError("leaf: shape does not match value count");
    check_finite(values, "leaf");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return leaf({1}, {v}, requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<double> v(numel(shape), 0.0);
    return leaf(std::move(shape), std::move(v), requires_grad);
}

std::vector<double>& Tensor::mutable_values() {
    return node_->values;
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) throw TensorError("grad not populated; run backward first");
    return node_->grad;
}

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (size() != 1) throw TensorError("item: tensor is not a scalar");
    return node_->values[0];
}

namespace {

// Elementwise binary op with scalar-or-equal-shape broadcasting only.
Tensor binary_ew(const Tensor& a, const Tensor& b, const char* op,
                 const std::function<double(double, double)>& f,
                 const std::function<double(double, double)>& dfda,
                 const std::function<double(double, double)>& dfdb) {
    const std::size_t na = a.size(), nb = b.size();
    if (na != nb && na != 1 && nb != 1) {
        throw TensorError(std::string(op) + ": shape mismatch (only scalar or equal-shape broadcasting)");
    }
    const std::size_t n = std::max(na, nb);
    const Shape& shape = (na >= nb) ? a.shape() : b.shape();
    std::vector<double> out(n);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = f(av[na == 1 ? 0 : i], bv[nb == 1 ? 0 : i]);
    }
    auto node = make_node(shape, std::move(out), {a.handle(), b.handle()}, op);
    if (node->requires_grad) {
        Node* pa = a.node();
        Node* pb = b.node();
        node->backprop = [pa, pb, na, nb, n, dfda, dfdb](Node& self) {
            for (std::size_t i = 0; i < n; ++i) {
                const double x = pa->values[na == 1 ? 0 : i];
                const double y = pb->values[nb == 1 ? 0 : i];
                const double g = self.grad[i];
                if (pa->requires_grad) {
                    ensure_grad(pa);
                    pa->grad[na == 1 ? 0 : i] += g * dfda(x, y);
                }
                if (pb->requires_grad) {
                    ensure_grad(pb);
                    pb->grad[nb == 1 ? 0 : i] += g * dfdb(x, y);
                }
            }
        };
    }
    return Tensor(std::move(node));
}

Tensor unary_ew(const Tensor& a, const char* op,
                const std::function<double(double)>& f,
                const std::function<double(double)>& df) {
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
    auto node = make_node(a.shape(), std::move(out), {a.handle()}, op);
    if (node->requires_grad) {
        Node* pa = a.node();
        node->backprop = [pa, df](Node& self) {
            ensure_grad(pa);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                pa->grad[i] += self.grad[i] * df(pa->values[i]);
            }
        };
    }
    return Tensor(std::move(node));
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "add",
                     [](double x, double y) { return x + y; },
                     [](double, double) { return 1.0; },
                     [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "sub",
                     [](double x, double y) { return x - y; },
                     [](double, double) { return 1.0; },
                     [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_ew(a, b, "mul",
                     [](double x, double y) { return x * y; },
                     [](double, double y) { return y; },
                     [](double x, double) { return x; });
}

Tensor neg(const Tensor& a) {
    return unary_ew(a, "neg", [](double x) { return -x; }, [](double) { return -1.0; });
}

Tensor vexp(const Tensor& a) {
    return unary_ew(a, "exp", [](double x) { return std::exp(x); },
                    [](double x) { return std::exp(x); });
}

Tensor vlog(const Tensor& a) {
    for (double x : a.values()) {
        if (x <= 0.0) throw TensorError("log: nonpositive input");
    }
    return unary_ew(a, "log", [](double x) { return std::log(x); },
                    [](double x) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
    return unary_ew(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (lo > hi) throw TensorError("clamp: lo > hi");
    return unary_ew(a, "clamp",
                    [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                    [lo, hi](double x) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Tensor add(const Tensor& a, double c) { return add(a, Tensor::scalar(c)); }
Tensor mul(const Tensor& a, double c) { return mul(a, Tensor::scalar(c)); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2) throw TensorError("matmul: rank-2 operands required");
    const std::size_t n = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], m = b.shape()[1];
    if (k != k2) throw TensorError("matmul: inner dimensions disagree");
    std::vector<double> out(n * m, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) out[i * m + j] += aip * bv[p * m + j];
        }
    auto node = make_node({n, m}, std::move(out), {a.handle(), b.handle()}, "matmul");
    if (node->requires_grad) {
        Node* pa = a.node();
        Node* pb = b.node();
        node->backprop = [pa, pb, n, k, m](Node& self) {
            if (pa->requires_grad) {
                ensure_grad(pa); // dA = dC * B^T
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < m; ++j)
                            acc += self.grad[i * m + j] * pb->values[p * m + j];
                        pa->grad[i * k + p] += acc;
                    }
            }
            if (pb->requires_grad) {
                ensure_grad(pb); // dB = A^T * dC
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < m; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < n; ++i)
                            acc += pa->values[i * k + p] * self.grad[i * m + j];
                        pb->grad[p * m + j] += acc;
                    }
            }
        };
    }
    return Tensor(std::move(node));
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    if (m.shape().size() != 2 || v.shape().size() != 1 || m.shape()[1] != v.shape()[0]) {
        throw TensorError("add_rowvec: expected (B,K) and (K,)");
    }
    const std::size_t b = m.shape()[0], k = m.shape()[1];
    std::vector<double> out(m.values());
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] += v.values()[j];
    auto node = make_node(m.shape(), std::move(out), {m.handle(), v.handle()}, "add_rowvec");
    if (node->requires_grad) {
        Node* pm = m.node();
        Node* pv = v.node();
        node->backprop = [pm, pv, b, k](Node& self) {
            if (pm->requires_grad) {
                ensure_grad(pm);
                for (std::size_t i = 0; i < b * k; ++i) pm->grad[i] += self.grad[i];
            }
            if (pv->requires_grad) {
                ensure_grad(pv);
                for (std::size_t i = 0; i < b; ++i)
                    for (std::size_t j = 0; j < k; ++j) pv->grad[j] += self.grad[i * k + j];
            }
        };
    }
    return Tensor(std::move(node));
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double x : a.values()) acc += x;
    auto node = make_node({1}, {acc}, {a.handle()}, "sum");
    if (node->requires_grad) {
        Node* pa = a.node();
        node->backprop = [pa](Node& self) {
            ensure_grad(pa);
            for (double& g : pa->grad) g += self.grad[0];
        };
    }
    return Tensor(std::move(node));
}

Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.size());
    return mul(sum(a), inv);
}

Tensor row_sum(const Tensor& a) {
    if (a.shape().size() != 2) throw TensorError("row_sum: rank-2 input required");
    const std::size_t b = a.shape()[0], k = a.shape()[1];
    std::vector<double> out(b, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < k; ++j) out[i] += a.values()[i * k + j];
    auto node = make_node({b}, std::move(out), {a.handle()}, "row_sum");
    if (node->requires_grad) {
        Node* pa = a.node();
        node->backprop = [pa, b, k](Node& self) {
            ensure_grad(pa);
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < k; ++j) pa->grad[i * k + j] += self.grad[i];
        };
    }
    return Tensor(std::move(node));
}

Tensor row_softmax(const Tensor& a) {
    if (a.shape().size() != 2) throw TensorError("row_softmax: rank-2 input required");
    const std::size_t b = a.shape()[0], k = a.shape()[1];
    std::vector<double> out(b * k);
    for (std::size_t i = 0; i < b; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, a.values()[i * k + j]);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            out[i * k + j] = std::exp(a.values()[i * k + j] - mx);
            z += out[i * k + j];
        }
        for (std::size_t j = 0; j < k; ++j) out[i * k + j] /= z;
    }
    auto node = make_node(a.shape(), std::move(out), {a.handle()}, "row_softmax");
    if (node->requires_grad) {
        Node* pa = a.node();
        node->backprop = [pa, b, k](Node& self) {
            ensure_grad(pa);
            for (std::size_t i = 0; i < b; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < k; ++j)
                    dot += self.grad[i * k + j] * self.values[i * k + j];
                for (std::size_t j = 0; j < k; ++j) {
                    const double y = self.values[i * k + j];
                    pa->grad[i * k + j] += y * (self.grad[i * k + j] - dot);
                }
            }
        };
    }
    return Tensor(std::move(node));
}

Tensor pick(const Tensor& a, const std::vector<int>& cols) {
    if (a.shape().size() != 2) throw TensorError("pick: rank-2 input required");
    const std::size_t b = a.shape()[0], k = a.shape()[1];
    if (cols.size() != b) throw TensorError("pick: index count does not match batch");
    std::vector<double> out(b);
    for (std::size_t i = 0; i < b; ++i) {
        if (cols[i] < 0 || static_cast<std::size_t>(cols[i]) >= k) throw TensorError("pick: index out of range");
        out[i] = a.values()[i * k + static_cast<std::size_t>(cols[i])];
    }
    auto node = make_node({b}, std::move(out), {a.handle()}, "pick");
    if (node->requires_grad) {
        Node* pa = a.node();
        auto idx = cols;
        node->backprop = [pa, k, idx](Node& self) {
            ensure_grad(pa);
            for (std::size_t i = 0; i < idx.size(); ++i)
                pa->grad[i * k + static_cast<std::size_t>(idx[i])] += self.grad[i];
        };
    }
    return Tensor(std::move(node));
}

Tensor row_max_excluding(const Tensor& a, const std::vector<int>& cols) {
    if (a.shape().size() != 2) throw TensorError("row_max_excluding: rank-2 input required");
    const std::size_t b = a.shape()[0], k = a.shape()[1];
    if (cols.size() != b) throw TensorError("row_max_excluding: index count does not match batch");
    if (k < 2) throw TensorError("row_max_excluding: needs at least 2 columns");
    std::vector<double> out(b);
    std::vector<std::size_t> arg(b);
    for (std::size_t i = 0; i < b; ++i) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t bestj = 0;
        for (std::size_t j = 0; j < k; ++j) {
            if (static_cast<int>(j) == cols[i]) continue;
            if (a.values()[i * k + j] > best) {
                best = a.values()[i * k + j];
                bestj = j;
            }
        }
        out[i] = best;
        arg[i] = bestj;
    }
    auto node = make_node({b}, std::move(out), {a.handle()}, "row_max_excluding");
    if (node->requires_grad) {
        Node* pa = a.node();
        node->backprop = [pa, k, arg](Node& self) {
            ensure_grad(pa);
            for (std::size_t i = 0; i < arg.size(); ++i)
                pa->grad[i * k + arg[i]] += self.grad[i];
        };
    }
    return Tensor(std::move(node));
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.size()) throw TensorError("reshape: element count mismatch");
    auto node = make_node(std::move(shape), a.values(), {a.handle()}, "reshape");
    if (node->requires_grad) {
        Node* pa = a.node();
        node->backprop = [pa](Node& self) {
            ensure_grad(pa);
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
        };
    }
    return Tensor(std::move(node));
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t pad) {
    if (x.shape().size() != 4 || w.shape().size() != 4) throw TensorError("conv2d: rank-4 input and kernel required");
    const std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const std::size_t OC = w.shape()[0], KC = w.shape()[1], KH = w.shape()[2], KW = w.shape()[3];
    if (KC != C) throw TensorError("conv2d: channel mismatch");
    if (bias.size() != OC) throw TensorError("conv2d: bias size mismatch");
    const std::size_t OH = H + 2 * pad - KH + 1, OW = W + 2 * pad - KW + 1;
    std::vector<double> out(B * OC * OH * OW, 0.0);
    const auto& xv = x.values();
    const auto& wv = w.values();
    auto xat = [&](std::size_t n, std::size_t c, long i, long j) -> double {
        if (i < 0 || j < 0 || i >= static_cast<long>(H) || j >= static_cast<long>(W)) return 0.0;
        return xv[((n * C + c) * H + i) * W + j];
    };
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t oc = 0; oc < OC; ++oc)
            for (std::size_t oi = 0; oi < OH; ++oi)
                for (std::size_t oj = 0; oj < OW; ++oj) {
                    double acc = bias.values()[oc];
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t ki = 0; ki < KH; ++ki)
                            for (std::size_t kj = 0; kj < KW; ++kj)
                                acc += wv[((oc * C + c) * KH + ki) * KW + kj] *
                                       xat(n, c, static_cast<long>(oi + ki) - static_cast<long>(pad),
                                           static_cast<long>(oj + kj) - static_cast<long>(pad));
                    out[((n * OC + oc) * OH + oi) * OW + oj] = acc;
                }
    auto node = make_node({B, OC, OH, OW}, std::move(out), {x.handle(), w.handle(), bias.handle()}, "conv2d");
    if (node->requires_grad) {
        Node* px = x.node();
        Node* pw = w.node();
        Node* pb = bias.node();
        node->backprop = [px, pw, pb, B, C, H, W, OC, KH, KW, OH, OW, pad](Node& self) {
            if (px->requires_grad) ensure_grad(px);
            if (pw->requires_grad) ensure_grad(pw);
            if (pb->requires_grad) ensure_grad(pb);
            for (std::size_t n = 0; n < B; ++n)
                for (std::size_t oc = 0; oc < OC; ++oc)
                    for (std::size_t oi = 0; oi < OH; ++oi)
                        for (std::size_t oj = 0; oj < OW; ++oj) {
                            const double g = self.grad[((n * OC + oc) * OH + oi) * OW + oj];
                            if (g == 0.0) continue;
                            if (pb->requires_grad) pb->grad[oc] += g;
                            for (std::size_t c = 0; c < C; ++c)
                                for (std::size_t ki = 0; ki < KH; ++ki)
                                    for (std::size_t kj = 0; kj < KW; ++kj) {
                                        const long i = static_cast<long>(oi + ki) - static_cast<long>(pad);
                                        const long j = static_cast<long>(oj + kj) - static_cast<long>(pad);
                                        if (i < 0 || j < 0 || i >= static_cast<long>(H) || j >= static_cast<long>(W))
                                            continue;
                                        const std::size_t xi = ((n * C + c) * H + i) * W + j;
                                        const std::size_t wi = ((oc * C + c) * KH + ki) * KW + kj;
                                        if (pw->requires_grad) pw->grad[wi] += g * px->values[xi];
                                        if (px->requires_grad) px->grad[xi] += g * pw->values[wi];
                                    }
                        }
        };
    }
    return Tensor(std::move(node));
}

Tensor maxpool2(const Tensor& x) {
    if (x.shape().size() != 4) throw TensorError("maxpool2: rank-4 input required");
    const std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (H % 2 != 0 || W % 2 != 0) throw TensorError("maxpool2: spatial extents must be even");
    const std::size_t OH = H / 2, OW = W / 2;
    std::vector<double> out(B * C * OH * OW);
    std::vector<std::size_t> arg(out.size());
    const auto& xv = x.values();
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t oi = 0; oi < OH; ++oi)
                for (std::size_t oj = 0; oj < OW; ++oj) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t bi = 0;
                    for (std::size_t di = 0; di < 2; ++di)
                        for (std::size_t dj = 0; dj < 2; ++dj) {
                            const std::size_t idx = ((n * C + c) * H + 2 * oi + di) * W + 2 * oj + dj;
                            if (xv[idx] > best) {
                                best = xv[idx];
                                bi = idx;
                            }
                        }
                    const std::size_t o = ((n * C + c) * OH + oi) * OW + oj;
                    out[o] = best;
                    arg[o] = bi;
                }
    auto node = make_node({B, C, OH, OW}, std::move(out), {x.handle()}, "maxpool2");
    if (node->requires_grad) {
        Node* px = x.node();
        node->backprop = [px, arg](Node& self) {
            ensure_grad(px);
            for (std::size_t o = 0; o < arg.size(); ++o) px->grad[arg[o]] += self.grad[o];
        };
    }
    return Tensor(std::move(node));
}

void backward(const Tensor& root) {
    if (!root.defined()) throw TensorError("backward: undefined root");
    Node* r = root.node();
    if (r->values.size() != 1) throw TensorError("backward: root must be scalar");
    if (r->backward_done) throw TensorError("backward: root already differentiated; re-run the forward pass");
    if (!r->requires_grad) throw TensorError("backward: root is detached from any gradient-tracked input");

    // Iterative post-order DFS; creation order is not stored, so topological
    // order is recovered from the parent links.
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(r, 0);
    visited.insert(r);
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : topo) ensure_grad(n);
    r->grad[0] += 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop(**it);
    }
    r->backward_done = true;
}

double finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                         const std::vector<double>& x,
                         const std::vector<double>& analytic,
                         double h) {
    if (x.size() != analytic.size()) throw TensorError("finite_diff_check: gradient size mismatch");
    double worst = 0.0;
    std::vector<double> xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp[i] = x[i] + h;
        const double fp = f(xp);
        xp[i] = x[i] - h;
        const double fm = f(xp);
        xp[i] = x[i];
        if (!std::isfinite(fp) || !std::isfinite(fm)) throw TensorError("finite_diff_check: non-finite function value");
        const double num = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic[i] - num) / (std::abs(analytic[i]) + 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

} // namespace ibat
