#include "ibat/mine.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <random>

namespace ibat {

namespace {

Tensor init_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> v(numel(shape));
    for (double& x : v) x = u(rng);
    return Tensor::leaf(std::move(shape), std::move(v), true);
}

// Minimal Adam, used only for critic training.
struct Adam {
    double lr = 5e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<std::vector<double>> m, v;
    long t = 0;

    void step(std::vector<Param>& params) {
        if (m.empty()) {
            for (auto& p : params) {
                m.emplace_back(p.tensor.size(), 0.0);
                v.emplace_back(p.tensor.size(), 0.0);
            }
        }
        ++t;
        const double c1 = 1.0 - std::pow(b1, t);
        const double c2 = 1.0 - std::pow(b2, t);
        for (std::size_t i = 0; i < params.size(); ++i) {
            auto& vals = params[i].tensor.mutable_values();
            const auto& g = params[i].tensor.grad();
            for (std::size_t j = 0; j < vals.size(); ++j) {
                m[i][j] = b1 * m[i][j] + (1 - b1) * g[j];
                v[i][j] = b2 * v[i][j] + (1 - b2) * g[j] * g[j];
                vals[j] -= lr * (m[i][j] / c1) / (std::sqrt(v[i][j] / c2) + eps);
            }
        }
    }
};

} // namespace

StatisticsNet::StatisticsNet(std::size_t dx, std::size_t dz, std::uint64_t seed, std::size_t width)
    : dx_(dx), dz_(dz) {
    std::mt19937_64 rng(seed);
    const std::size_t in = dx + dz;
    params_.push_back({"w1", init_uniform({in, width}, in, rng)});
    params_.push_back({"b1", init_uniform({width}, in, rng)});
    params_.push_back({"w2", init_uniform({width, width}, width, rng)});
    params_.push_back({"b2", init_uniform({width}, width, rng)});
    params_.push_back({"w3", init_uniform({width, 1}, width, rng)});
    params_.push_back({"b3", init_uniform({1}, width, rng)});
}

Tensor StatisticsNet::scores(const Tensor& pairs) const {
    Tensor h = relu(add_rowvec(matmul(pairs, params_[0].tensor), params_[1].tensor));
    h = relu(add_rowvec(matmul(h, params_[2].tensor), params_[3].tensor));
    Tensor out = add_rowvec(matmul(h, params_[4].tensor), params_[5].tensor);
    // Clamp keeps exp(T) finite if the critic briefly diverges.
    return clamp(reshape(out, {pairs.shape()[0]}), -50.0, 50.0);
}

double mine_estimate(StatisticsNet& net, const std::vector<double>& xs,
                     const std::vector<double>& zs, std::size_t n,
                     int train_steps, std::uint64_t seed) {
    const std::size_t dx = net.dx(), dz = net.dz();
    if (xs.size() != n * dx || zs.size() != n * dz) throw TensorError("mine_estimate: size mismatch");
    if (n < 16) throw TensorError("mine_estimate: batch must be >= 16");

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);

    std::vector<double> joint(n * (dx + dz)), marg(n * (dx + dz));
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(xs.begin() + static_cast<long>(i * dx), dx, joint.begin() + static_cast<long>(i * (dx + dz)));
        std::copy_n(zs.begin() + static_cast<long>(i * dz), dz,
                    joint.begin() + static_cast<long>(i * (dx + dz) + dx));
    }

    Adam opt;
    std::deque<double> window;
    const double limit = std::log(static_cast<double>(n)) + 1.0;
    double bound = 0.0;
    for (int s = 0; s < train_steps; ++s) {
        std::shuffle(perm.begin(), perm.end(), rng);
        for (std::size_t i = 0; i < n; ++i) {
            std::copy_n(xs.begin() + static_cast<long>(i * dx), dx,
                        marg.begin() + static_cast<long>(i * (dx + dz)));
            std::copy_n(zs.begin() + static_cast<long>(perm[i] * dz), dz,
                        marg.begin() + static_cast<long>(i * (dx + dz) + dx));
        }
        Tensor tj = net.scores(Tensor::leaf({n, dx + dz}, joint, false));
        Tensor tm = net.scores(Tensor::leaf({n, dx + dz}, marg, false));
        Tensor dv = sub(mean(tj), vlog(mean(vexp(tm))));
        bound = dv.item();
        if (bound > limit) throw TensorError("mine_estimate: bound diverged past ln(batch) + 1; estimate unstable");

        for (auto& p : net.params()) p.tensor.zero_grad();
        backward(neg(dv));
        opt.step(net.params());

        window.push_back(bound);
        if (window.size() > 10) window.pop_front();
    }
    return std::accumulate(window.begin(), window.end(), 0.0) / static_cast<double>(window.size());
}

std::vector<double> mean_pool_rows(const std::vector<double>& data, std::size_t n, std::size_t d,
                                   std::size_t target_dim) {
    if (d <= target_dim) return data;
    std::vector<double> out(n * target_dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < target_dim; ++t) {
            const std::size_t begin = t * d / target_dim;
            const std::size_t end = (t + 1) * d / target_dim;
            double acc = 0.0;
            for (std::size_t j = begin; j < end; ++j) acc += data[i * d + j];
            out[i * target_dim + t] = acc / static_cast<double>(end - begin);
        }
    }
    return out;
}

std::string resolve_tap(const Classifier& c, const std::string& tap) {
    auto names = c.tap_names();
    if (!tap.empty() && tap[0] == '#') {
        const std::size_t k = static_cast<std::size_t>(std::stoul(tap.substr(1)));
        if (k < 1 || k >= names.size()) throw ModelError("tap index out of range: " + tap);
        return names[k]; // #1 is the first post-input tap
    }
    for (const auto& n : names) {
        if (n == tap) return n;
    }
    throw ModelError("unknown latent tap: " + tap);
}

double batch_mi_weight(const Classifier& c, StatisticsNet& net, const std::vector<double>& xs,
                       std::size_t batch, const std::string& tap, int train_steps,
                       std::uint64_t seed) {
    const std::string tap_name = resolve_tap(c, tap);
    Tensor x = Tensor::leaf({batch, c.input_dim()}, xs, false);
    Forward f = c.forward(x);
    const Tensor& z = f.tap(tap_name);
    const std::size_t zdim = z.size() / batch;

    auto xp = mean_pool_rows(xs, batch, c.input_dim(), kMinePoolDim);
    auto zp = mean_pool_rows(z.values(), batch, zdim, kMinePoolDim);
    const double estimate = mine_estimate(net, xp, zp, batch, train_steps, seed);
    return std::max(estimate, 0.0); // a weight, so negative noise is clipped
}

} // namespace ibat
