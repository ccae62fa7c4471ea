#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "ibat/tensor.hpp"

using namespace ibat;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

// Gradient of f at x via the graph, for FD comparison.
template <typename F>
double max_fd_error(F graph_fn, const std::vector<double>& x, double h = 1e-5) {
    Tensor leafv = Tensor::leaf({x.size()}, x, true);
    Tensor out = graph_fn(leafv);
    backward(out);
    auto scalar_fn = [&](const std::vector<double>& v) {
        Tensor l = Tensor::leaf({v.size()}, v, false);
        return graph_fn(l).item();
    };
    return finite_diff_check(scalar_fn, x, leafv.grad(), h);
}

} // namespace

TEST_CASE("leaf construction and scalar access") {
    Tensor t = Tensor::leaf({2, 3}, {1, 2, 3, 4, 5, 6});
    CHECK(t.shape() == Shape{2, 3});
    CHECK(t.size() == 6);
    CHECK(t.values()[4] == 5);
    CHECK_THROWS_AS(Tensor::leaf({2, 2}, {1, 2, 3}), TensorError);
    CHECK(Tensor::scalar(3.5).item() == 3.5);
    CHECK_THROWS_AS(t.item(), TensorError);
}

TEST_CASE("elementwise forward values") {
    Tensor a = Tensor::leaf({3}, {1, -2, 0.5});
    Tensor b = Tensor::leaf({3}, {2, 3, -1});
    CHECK(add(a, b).values() == std::vector<double>{3, 1, -0.5});
    CHECK(sub(a, b).values() == std::vector<double>{-1, -5, 1.5});
    CHECK(mul(a, b).values() == std::vector<double>{2, -6, -0.5});
    CHECK(relu(a).values() == std::vector<double>{1, 0, 0.5});
    CHECK(clamp(a, -1, 1).values() == std::vector<double>{1, -1, 0.5});
    CHECK(mul(a, 2.0).values() == std::vector<double>{2, -4, 1});
    CHECK(add(a, 1.0).values() == std::vector<double>{2, -1, 1.5});
}

TEST_CASE("scalar broadcasting and shape mismatch") {
    Tensor a = Tensor::leaf({2, 2}, {1, 2, 3, 4});
    Tensor s = Tensor::scalar(10);
    CHECK(add(a, s).values() == std::vector<double>{11, 12, 13, 14});
    CHECK(mul(s, a).values() == std::vector<double>{10, 20, 30, 40});
    Tensor bad = Tensor::leaf({3}, {1, 2, 3});
    CHECK_THROWS_AS(add(a, bad), TensorError);
}

TEST_CASE("matmul against triple-loop oracle") {
    std::mt19937_64 rng(7);
    const std::size_t m = 4, k = 5, n = 3;
    auto av = random_vec(m * k, rng), bv = random_vec(k * n, rng);
    Tensor c = matmul(Tensor::leaf({m, k}, av), Tensor::leaf({k, n}, bv));
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0;
            for (std::size_t t = 0; t < k; ++t) acc += av[i * k + t] * bv[t * n + j];
            CHECK(c.values()[i * n + j] == doctest::Approx(acc).epsilon(1e-12));
        }
    CHECK_THROWS_AS(matmul(Tensor::leaf({2, 3}, random_vec(6, rng)),
                           Tensor::leaf({2, 3}, random_vec(6, rng))),
                    TensorError);
}

TEST_CASE("row_softmax rows are simplex points and shift invariant") {
    Tensor z = Tensor::leaf({2, 3}, {1, 2, 3, -1, 0, 1});
    Tensor p = row_softmax(z);
    for (std::size_t i = 0; i < 2; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < 3; ++j) s += p.values()[i * 3 + j];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    // Large logits must not overflow thanks to max subtraction.
    Tensor big = row_softmax(Tensor::leaf({1, 2}, {1000, 1001}));
    CHECK(big.values()[1] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));
    // The two rows of z differ by a constant shift, so probabilities agree.
    for (std::size_t j = 0; j < 3; ++j)
        CHECK(p.values()[j] == doctest::Approx(p.values()[3 + j]).epsilon(1e-12));
}

TEST_CASE("pick and row_max_excluding") {
    Tensor a = Tensor::leaf({2, 3}, {1, 5, 3, 9, 2, 4});
    CHECK(pick(a, {1, 0}).values() == std::vector<double>{5, 9});
    CHECK(row_max_excluding(a, {1, 0}).values() == std::vector<double>{3, 4});
    CHECK_THROWS_AS(pick(a, {3, 0}), TensorError);
}

TEST_CASE("reductions") {
    Tensor a = Tensor::leaf({2, 2}, {1, 2, 3, 4});
    CHECK(sum(a).item() == 10);
    CHECK(mean(a).item() == 2.5);
    CHECK(row_sum(a).values() == std::vector<double>{3, 7});
}

TEST_CASE("non-finite forward values are rejected") {
    CHECK_THROWS_AS(Tensor::leaf({1}, {std::nan("")}), TensorError);
    Tensor big = Tensor::leaf({1}, {1e308});
    CHECK_THROWS_AS(add(big, big), TensorError); // overflow to inf
    CHECK_THROWS_AS(vlog(Tensor::leaf({1}, {0.0})), TensorError);
    CHECK_THROWS_AS(vlog(Tensor::leaf({1}, {-1.0})), TensorError);
}

TEST_CASE("backward throws on a second call without re-forward") {
    Tensor x = Tensor::leaf({2}, {1, 2}, true);
    Tensor y = sum(mul(x, x));
    backward(y);
    CHECK(x.grad() == std::vector<double>{2, 4});
    CHECK_THROWS_AS(backward(y), TensorError);
    // A fresh forward pass works again.
    Tensor y2 = sum(mul(x, x));
    CHECK_NOTHROW(backward(y2));
}

TEST_CASE("backward requires scalar root with a tracked input") {
    Tensor x = Tensor::leaf({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(mul(x, x)), TensorError); // non-scalar
    Tensor d = Tensor::leaf({2}, {1, 2}, false);
    CHECK_THROWS_AS(backward(sum(mul(d, d))), TensorError); // detached
}

TEST_CASE("gradient accumulates across reuse of the same tensor") {
    Tensor x = Tensor::leaf({1}, {3}, true);
    Tensor y = sum(add(mul(x, x), x)); // x^2 + x, dy/dx = 2x + 1
    backward(y);
    CHECK(x.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("finite-difference suite over random composite graphs") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        auto x = random_vec(6, rng);
        // exp/log/softmax chain: scalar = mean(log(softmax(reshape(x)) + 1)) style mix
        double err = max_fd_error(
            [](const Tensor& v) {
                Tensor m = reshape(v, {2, 3});
                Tensor p = row_softmax(m);
                Tensor q = vlog(add(p, 1.0));
                return mean(add(mul(q, q), vexp(mul(q, 0.5))));
            },
            x);
        CHECK_MESSAGE(err <= 1e-4, "seed ", seed, " err ", err);

        // relu/clamp kinks: shift inputs off the kink so the subgradient is two-sided.
        auto x2 = random_vec(6, rng);
        for (auto& v : x2)
            if (std::abs(v) < 1e-3) v += 0.01;
        err = max_fd_error(
            [](const Tensor& v) { return sum(mul(relu(v), clamp(v, -0.5, 0.5))); }, x2);
        CHECK_MESSAGE(err <= 1e-4, "seed ", seed, " err ", err);
    }
}

TEST_CASE("matmul and add_rowvec gradients") {
    std::mt19937_64 rng(11);
    auto wv = random_vec(6, rng);
    auto bv = random_vec(2, rng);
    auto xv = random_vec(3, rng);
    // d/dx of sum(x W + b) checked against FD.
    double err = max_fd_error(
        [&](const Tensor& v) {
            Tensor x = reshape(v, {1, 3});
            Tensor w = Tensor::leaf({3, 2}, wv);
            Tensor b = Tensor::leaf({2}, bv);
            return sum(mul(add_rowvec(matmul(x, w), b), add_rowvec(matmul(x, w), b)));
        },
        xv);
    CHECK(err <= 1e-4);
    // d/dW with x fixed.
    Tensor w = Tensor::leaf({3, 2}, wv, true);
    Tensor x = Tensor::leaf({1, 3}, xv);
    backward(sum(matmul(x, w)));
    auto fd = finite_diff_check(
        [&](const std::vector<double>& v) {
            return sum(matmul(x, Tensor::leaf({3, 2}, v))).item();
        },
        wv, w.grad(), 1e-5);
    CHECK(fd <= 1e-4);
}

TEST_CASE("conv2d matches direct correlation and its gradient passes FD") {
    std::mt19937_64 rng(13);
    const std::size_t C = 2, H = 4, W = 4, OC = 3, K = 3, pad = 1;
    auto xv = random_vec(C * H * W, rng);
    auto wv = random_vec(OC * C * K * K, rng);
    auto bv = random_vec(OC, rng);
    Tensor out = conv2d(Tensor::leaf({1, C, H, W}, xv), Tensor::leaf({OC, C, K, K}, wv),
                        Tensor::leaf({OC}, bv), pad);
    CHECK(out.shape() == Shape{1, OC, H, W});
    // Direct correlation oracle at a few positions.
    auto oracle = [&](std::size_t oc, std::size_t i, std::size_t j) {
        double acc = bv[oc];
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ki = 0; ki < K; ++ki)
                for (std::size_t kj = 0; kj < K; ++kj) {
                    const long ii = static_cast<long>(i + ki) - static_cast<long>(pad);
                    const long jj = static_cast<long>(j + kj) - static_cast<long>(pad);
                    if (ii < 0 || jj < 0 || ii >= static_cast<long>(H) || jj >= static_cast<long>(W))
                        continue;
                    acc += xv[(c * H + static_cast<std::size_t>(ii)) * W + static_cast<std::size_t>(jj)] *
                           wv[((oc * C + c) * K + ki) * K + kj];
                }
        return acc;
    };
    for (std::size_t oc = 0; oc < OC; ++oc)
        for (std::size_t i : {std::size_t{0}, std::size_t{2}})
            for (std::size_t j : {std::size_t{1}, std::size_t{3}})
                CHECK(out.values()[(oc * H + i) * W + j] == doctest::Approx(oracle(oc, i, j)));

    double err = max_fd_error(
        [&](const Tensor& v) {
            Tensor x = reshape(v, {1, C, H, W});
            Tensor o = conv2d(x, Tensor::leaf({OC, C, K, K}, wv), Tensor::leaf({OC}, bv), pad);
            return sum(mul(o, o));
        },
        xv);
    CHECK(err <= 1e-4);
}

TEST_CASE("maxpool2 forward and gradient routing") {
    Tensor x = Tensor::leaf({1, 1, 2, 2}, {1, 4, 2, 3}, true);
    Tensor p = maxpool2(x);
    CHECK(p.values() == std::vector<double>{4});
    backward(sum(p));
    CHECK(x.grad() == std::vector<double>{0, 1, 0, 0});
    CHECK_THROWS_AS(maxpool2(Tensor::leaf({1, 1, 3, 3}, std::vector<double>(9, 0.0))),
                    TensorError);
}

TEST_CASE("determinism: identical graphs give identical gradients") {
    auto run = [] {
        std::mt19937_64 rng(42);
        std::uniform_real_distribution<double> u(-1, 1);
        std::vector<double> v(8);
        for (auto& x : v) x = u(rng);
        Tensor t = Tensor::leaf({2, 4}, v, true);
        backward(mean(mul(row_softmax(t), row_softmax(t))));
        return t.grad();
    };
    CHECK(run() == run());
}

TEST_CASE("sign0 convention") {
    CHECK(sign0(3.2) == 1.0);
    CHECK(sign0(-0.1) == -1.0);
    CHECK(sign0(0.0) == 0.0);
}
