#include "ibat/model.hpp"

#include <cmath>
#include <sstream>

namespace ibat {

const Tensor& Forward::tap(const std::string& name) const {
    for (const auto& [n, t] : taps) {
        if (n == name) return t;
    }
    throw ModelError("unknown latent tap: " + name);
}

namespace {

std::vector<std::size_t> parse_dims(const std::string& s, char sep) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, sep)) {
        if (tok.empty()) throw ModelError("bad architecture descriptor token");
        out.push_back(static_cast<std::size_t>(std::stoul(tok)));
    }
    return out;
}

} // namespace

Tensor Classifier::init_tensor(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> v(numel(shape));
    for (double& x : v) x = u(rng);
    return Tensor::leaf(std::move(shape), std::move(v), true);
}

void Classifier::init_params(std::mt19937_64& rng) {
    params_.clear();
    if (!conv_) {
        for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
            const std::size_t in = dims_[l], out = dims_[l + 1];
            params_.push_back({"w" + std::to_string(l + 1), init_tensor({in, out}, in, rng)});
            params_.push_back({"b" + std::to_string(l + 1), init_tensor({out}, in, rng)});
        }
    } else {
        params_.push_back({"cw1", init_tensor({conv1_, channels_, 3, 3}, channels_ * 9, rng)});
        params_.push_back({"cb1", init_tensor({conv1_}, channels_ * 9, rng)});
        params_.push_back({"cw2", init_tensor({conv2_, conv1_, 3, 3}, conv1_ * 9, rng)});
        params_.push_back({"cb2", init_tensor({conv2_}, conv1_ * 9, rng)});
        const std::size_t flat = conv2_ * (height_ / 4) * (width_ / 4);
        params_.push_back({"fw", init_tensor({flat, num_classes_}, flat, rng)});
        params_.push_back({"fb", init_tensor({num_classes_}, flat, rng)});
    }
}

Classifier Classifier::make(const std::string& descriptor, std::mt19937_64& rng) {
    Classifier c;
    c.descriptor_ = descriptor;
    const auto colon = descriptor.find(':');
    if (colon == std::string::npos) throw ModelError("bad architecture descriptor: " + descriptor);
    const std::string kind = descriptor.substr(0, colon);
    const std::string rest = descriptor.substr(colon + 1);
    if (kind == "mlp") {
        c.dims_ = parse_dims(rest, '-');
        if (c.dims_.size() < 2) throw ModelError("mlp descriptor needs input and output widths");
        c.input_dim_ = c.dims_.front();
        c.num_classes_ = c.dims_.back();
        c.width_ = c.input_dim_;
    } else if (kind == "smallconv") {
        const auto dash = rest.find('-');
        if (dash == std::string::npos) throw ModelError("bad smallconv descriptor: " + descriptor);
        auto spatial = parse_dims(rest.substr(0, dash), 'x');
        auto tail = parse_dims(rest.substr(dash + 1), '-');
        if (spatial.size() != 3 || tail.size() != 3) throw ModelError("bad smallconv descriptor: " + descriptor);
        c.conv_ = true;
        c.channels_ = spatial[0];
        c.height_ = spatial[1];
        c.width_ = spatial[2];
        if (c.height_ % 4 != 0 || c.width_ % 4 != 0)
            throw ModelError("smallconv needs spatial extents divisible by 4");
        c.conv1_ = tail[0];
        c.conv2_ = tail[1];
        c.num_classes_ = tail[2];
        c.input_dim_ = c.channels_ * c.height_ * c.width_;
    } else {
        throw ModelError("unknown architecture kind: " + kind);
    }
    if (c.num_classes_ < 2) throw ModelError("classifier needs at least 2 classes");
    c.init_params(rng);
    return c;
}

Classifier Classifier::reference_mlp(std::size_t input_dim, std::size_t classes, std::mt19937_64& rng) {
    return make("mlp:" + std::to_string(input_dim) + "-256-256-" + std::to_string(classes), rng);
}

Classifier Classifier::small_conv(std::size_t channels, std::size_t h, std::size_t w,
                                  std::size_t classes, std::mt19937_64& rng) {
    return make("smallconv:" + std::to_string(channels) + "x" + std::to_string(h) + "x" +
                    std::to_string(w) + "-8-16-" + std::to_string(classes),
                rng);
}

Param& Classifier::param(const std::string& name) {
    for (auto& p : params_) {
        if (p.name == name) return p;
    }
    throw ModelError("unknown parameter: " + name);
}

void Classifier::zero_grads() {
    for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<std::string> Classifier::tap_names() const {
    std::vector<std::string> names{"input"};
    if (!conv_) {
        for (std::size_t l = 1; l + 1 < dims_.size(); ++l) names.push_back("hidden" + std::to_string(l));
    } else {
        names.push_back("conv1");
        names.push_back("conv2");
        names.push_back("flat");
    }
    names.push_back("logits");
    return names;
}

Forward Classifier::forward(const Tensor& x) const {
    if (x.shape().size() != 2 || x.shape()[1] != input_dim_)
        throw ModelError("forward: input width does not match architecture");
    Forward f;
    f.taps.emplace_back("input", x);
    if (!conv_) {
        Tensor h = x;
        const std::size_t layers = dims_.size() - 1;
        for (std::size_t l = 0; l < layers; ++l) {
            const Tensor& w = params_[2 * l].tensor;
            const Tensor& b = params_[2 * l + 1].tensor;
            h = add_rowvec(matmul(h, w), b);
            if (l + 1 < layers) {
                h = relu(h);
                f.taps.emplace_back("hidden" + std::to_string(l + 1), h);
            }
        }
        f.logits = h;
    } else {
        const std::size_t B = x.shape()[0];
        Tensor img = reshape(x, {B, channels_, height_, width_});
        Tensor h1 = maxpool2(relu(conv2d(img, params_[0].tensor, params_[1].tensor, 1)));
        f.taps.emplace_back("conv1", h1);
        Tensor h2 = maxpool2(relu(conv2d(h1, params_[2].tensor, params_[3].tensor, 1)));
        f.taps.emplace_back("conv2", h2);
        Tensor flat = reshape(h2, {B, conv2_ * (height_ / 4) * (width_ / 4)});
        f.taps.emplace_back("flat", flat);
        f.logits = add_rowvec(matmul(flat, params_[4].tensor), params_[5].tensor);
    }
    f.taps.emplace_back("logits", f.logits);
    return f;
}

std::vector<int> Classifier::predict(const std::vector<double>& inputs, std::size_t batch) const {
    Tensor x = Tensor::leaf({batch, input_dim_}, inputs, false);
    return argmax_rows(logits(x));
}

Tensor softmax_probs(const Tensor& logits) {
    return row_softmax(logits);
}

std::vector<int> argmax_rows(const Tensor& t) {
    if (t.shape().size() != 2) throw ModelError("argmax_rows: rank-2 input required");
    const std::size_t b = t.shape()[0], k = t.shape()[1];
    std::vector<int> out(b);
    for (std::size_t i = 0; i < b; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (t.values()[i * k + j] > t.values()[i * k + best]) best = j;
        }
        out[i] = static_cast<int>(best);
    }
    return out;
}

} // namespace ibat
