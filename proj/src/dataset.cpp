#include "ibat/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace ibat {

namespace {

std::uint32_t read_be_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw DatasetError("truncated file while reading " + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

} // namespace

LabeledDataset LabeledDataset::slice(std::size_t begin, std::size_t count) const {
    if (begin + count > n) throw DatasetError("slice out of range");
    LabeledDataset out;
    out.n = count;
    out.d = d;
    out.num_classes = num_classes;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.name = name + "[" + std::to_string(begin) + ":" + std::to_string(begin + count) + "]";
    out.inputs.assign(inputs.begin() + static_cast<long>(begin * d),
                      inputs.begin() + static_cast<long>((begin + count) * d));
    out.labels.assign(labels.begin() + static_cast<long>(begin),
                      labels.begin() + static_cast<long>(begin + count));
    return out;
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw DatasetError("cannot open images file: " + images_path);
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw DatasetError("cannot open labels file: " + labels_path);

    const std::uint32_t img_magic = read_be_u32(img, "images magic");
    if (img_magic != 0x00000803u) throw DatasetError("bad magic in images file (expected 0x00000803)");
    const std::uint32_t n_img = read_be_u32(img, "image count");
    const std::uint32_t rows = read_be_u32(img, "rows");
    const std::uint32_t cols = read_be_u32(img, "cols");

    const std::uint32_t lab_magic = read_be_u32(lab, "labels magic");
    if (lab_magic != 0x00000801u) throw DatasetError("bad magic in labels file (expected 0x00000801)");
    const std::uint32_t n_lab = read_be_u32(lab, "label count");
    if (n_img != n_lab) throw DatasetError("image/label count mismatch");

    LabeledDataset ds;
    ds.n = n_img;
    ds.d = static_cast<std::size_t>(rows) * cols;
    ds.channels = 1;
    ds.height = rows;
    ds.width = cols;
    ds.name = "idx";

    std::vector<unsigned char> buf(ds.n * ds.d);
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<long>(buf.size()));
    if (!img && ds.n > 0) throw DatasetError("truncated images file");
    ds.inputs.resize(buf.size());
    for (std::size_t i = 0; i < buf.size(); ++i) ds.inputs[i] = buf[i] / 255.0;

    std::vector<unsigned char> lbuf(ds.n);
    lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<long>(lbuf.size()));
    if (!lab && ds.n > 0) throw DatasetError("truncated labels file");
    ds.labels.assign(lbuf.begin(), lbuf.end());
    int maxl = 0;
    for (int y : ds.labels) maxl = std::max(maxl, y);
    ds.num_classes = static_cast<std::size_t>(std::max(maxl + 1, 10));
    return ds;
}

LabeledDataset load_cifar_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DatasetError("cannot open file: " + path);
    in.seekg(0, std::ios::end);
    const auto len = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    constexpr std::size_t record = 3073;
    if (len % record != 0) throw DatasetError("file length is not a multiple of the 3073-byte record size");

    LabeledDataset ds;
    ds.n = len / record;
    ds.d = 3072;
    ds.channels = 3;
    ds.height = 32;
    ds.width = 32;
    ds.num_classes = 10;
    ds.name = "cifar";
    if (ds.n == 0) {
        std::fprintf(stderr, "warning: empty CIFAR batch file %s\n", path.c_str());
        return ds;
    }
    ds.inputs.resize(ds.n * ds.d);
    ds.labels.resize(ds.n);
    std::vector<unsigned char> buf(record);
    for (std::size_t i = 0; i < ds.n; ++i) {
        in.read(reinterpret_cast<char*>(buf.data()), record);
        if (!in) throw DatasetError("truncated record in " + path);
        if (buf[0] > 9) throw DatasetError("label byte out of range in " + path);
        ds.labels[i] = buf[0];
        for (std::size_t j = 0; j < 3072; ++j) ds.inputs[i * 3072 + j] = buf[1 + j] / 255.0;
    }
    return ds;
}

LabeledDataset gen_two_moons(std::size_t n, double noise, std::uint64_t seed) {
    if (n % 2 != 0) throw DatasetError("gen_two_moons: n must be even");
    if (noise < 0) throw DatasetError("gen_two_moons: noise must be nonnegative");
    const std::size_t half = n / 2;
    LabeledDataset ds;
    ds.n = n;
    ds.d = 2;
    ds.width = 2;
    ds.num_classes = 2;
    ds.name = "two_moons";
    ds.inputs.resize(2 * n);
    ds.labels.resize(n);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    // Evenly spaced angles keep the noiseless geometry deterministic.
    for (std::size_t i = 0; i < half; ++i) {
        const double t = half == 1 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(half - 1);
        double x = std::cos(t);
        double y = std::sin(t);
        if (noise > 0) {
            x += noise * gauss(rng);
            y += noise * gauss(rng);
        }
        ds.inputs[2 * i] = x;
        ds.inputs[2 * i + 1] = y;
        ds.labels[i] = 0;
    }
    for (std::size_t i = 0; i < half; ++i) {
        const double t = half == 1 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(half - 1);
        double x = 1.0 - std::cos(t);
        double y = 0.5 - std::sin(t);
        if (noise > 0) {
            x += noise * gauss(rng);
            y += noise * gauss(rng);
        }
        ds.inputs[2 * (half + i)] = x;
        ds.inputs[2 * (half + i) + 1] = y;
        ds.labels[half + i] = 1;
    }

    // Affine rescale into [0,1]^2 using the realized extents.
    for (std::size_t c = 0; c < 2; ++c) {
        double lo = ds.inputs[c], hi = ds.inputs[c];
        for (std::size_t i = 0; i < n; ++i) {
            lo = std::min(lo, ds.inputs[2 * i + c]);
            hi = std::max(hi, ds.inputs[2 * i + c]);
        }
        const double span = hi > lo ? hi - lo : 1.0;
        for (std::size_t i = 0; i < n; ++i) {
            double v = (ds.inputs[2 * i + c] - lo) / span;
            ds.inputs[2 * i + c] = std::clamp(v, 0.0, 1.0);
        }
    }
    return ds;
}

BatchIterator::BatchIterator(const LabeledDataset& data, std::size_t batch_size, std::uint64_t seed)
    : data_(data), m_(batch_size), rng_(seed) {
    if (m_ < 1) throw DatasetError("batch size must be >= 1");
    perm_.resize(data_.n);
    for (std::size_t i = 0; i < perm_.size(); ++i) perm_[i] = i;
    std::shuffle(perm_.begin(), perm_.end(), rng_);
}

std::optional<Batch> BatchIterator::next() {
    if (cursor_ >= perm_.size()) return std::nullopt;
    const std::size_t m = std::min(m_, perm_.size() - cursor_);
    Batch b;
    b.m = m;
    b.indices.assign(perm_.begin() + static_cast<long>(cursor_),
                     perm_.begin() + static_cast<long>(cursor_ + m));
    b.inputs.resize(m * data_.d);
    b.labels.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t src = b.indices[i];
        std::copy_n(data_.inputs.begin() + static_cast<long>(src * data_.d), data_.d,
                    b.inputs.begin() + static_cast<long>(i * data_.d));
        b.labels[i] = data_.labels[src];
    }
    cursor_ += m;
    return b;
}

void BatchIterator::new_epoch() {
    std::shuffle(perm_.begin(), perm_.end(), rng_);
    cursor_ = 0;
}

} // namespace ibat
