#include "ibat/eval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "ibat/csv.hpp"
#include "ibat/losses.hpp"

namespace ibat {

namespace {

constexpr char kMagic[4] = {'I', 'B', 'A', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

void write_u32(std::ostream& o, std::uint32_t v) { o.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& o, std::uint64_t v) { o.write(reinterpret_cast<const char*>(&v), 8); }
void write_str(std::ostream& o, const std::string& s) {
    write_u32(o, static_cast<std::uint32_t>(s.size()));
    o.write(s.data(), static_cast<long>(s.size()));
}

std::uint32_t read_u32(std::istream& i) {
    std::uint32_t v;
    i.read(reinterpret_cast<char*>(&v), 4);
    if (!i) throw CheckpointError("corrupt checkpoint: truncated");
    return v;
}
std::uint64_t read_u64(std::istream& i) {
    std::uint64_t v;
    i.read(reinterpret_cast<char*>(&v), 8);
    if (!i) throw CheckpointError("corrupt checkpoint: truncated");
    return v;
}
std::string read_str(std::istream& i) {
    const auto len = read_u32(i);
    std::string s(len, '\0');
    i.read(s.data(), len);
    if (!i) throw CheckpointError("corrupt checkpoint: truncated");
    return s;
}

} // namespace

void save_checkpoint(const Classifier& c, const std::string& config_snapshot, std::uint64_t seed,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_str(out, c.descriptor());
    write_str(out, config_snapshot);
    write_u64(out, seed);
    write_u32(out, static_cast<std::uint32_t>(c.params().size()));
    for (const auto& p : c.params()) {
        write_str(out, p.name);
        write_u32(out, static_cast<std::uint32_t>(p.tensor.shape().size()));
        for (auto e : p.tensor.shape()) write_u32(out, static_cast<std::uint32_t>(e));
        out.write(reinterpret_cast<const char*>(p.tensor.values().data()),
                  static_cast<long>(p.tensor.size() * sizeof(double)));
    }
    if (!out) throw CheckpointError("write failure: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError("bad checkpoint magic");
    const auto version = read_u32(in);
    if (version != kVersion)
        throw CheckpointError("checkpoint version " + std::to_string(version) +
                              " not supported by this reader (expected " + std::to_string(kVersion) + ")");
    LoadedCheckpoint ck;
    const std::string descriptor = read_str(in);
    ck.config_snapshot = read_str(in);
    ck.seed = read_u64(in);
    std::mt19937_64 rng(0); // parameters are overwritten below
    ck.model = Classifier::make(descriptor, rng);
    const auto count = read_u32(in);
    if (count != ck.model.params().size())
        throw CheckpointError("parameter count does not match architecture descriptor");
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string name = read_str(in);
        Param& p = ck.model.param(name);
        const auto rank = read_u32(in);
        Shape shape(rank);
        for (auto& e : shape) e = read_u32(in);
        if (shape != p.tensor.shape())
            throw CheckpointError("shape mismatch for parameter " + name);
        std::vector<double> vals(numel(shape));
        in.read(reinterpret_cast<char*>(vals.data()), static_cast<long>(vals.size() * sizeof(double)));
        if (!in) throw CheckpointError("corrupt checkpoint: truncated parameter " + name);
        p.tensor.mutable_values() = std::move(vals);
    }
    return ck;
}

double clean_accuracy(const Classifier& c, const LabeledDataset& data) {
    if (data.n == 0) return 0.0;
    auto pred = c.predict(data.inputs, data.n);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < data.n; ++i) hit += pred[i] == data.labels[i];
    return static_cast<double>(hit) / static_cast<double>(data.n);
}

double robust_accuracy(const Classifier& c, const LabeledDataset& data, const AttackConfig& cfg,
                       const std::string& attack_kind, std::mt19937_64& rng,
                       std::size_t eval_batch) {
    if (data.n == 0) return 0.0;
    std::size_t hit = 0;
    for (std::size_t off = 0; off < data.n; off += eval_batch) {
        const std::size_t m = std::min(eval_batch, data.n - off);
        const LabeledDataset part = data.slice(off, m);
        AdvResult adv = run_attack(c, part.inputs, m, part.labels, cfg, attack_kind, rng);
        auto pred = c.predict(adv.x_adv, m);
        for (std::size_t i = 0; i < m; ++i) hit += pred[i] == part.labels[i];
    }
    return static_cast<double>(hit) / static_cast<double>(data.n);
}

EntropyProfile entropy_robustness_profile(const Classifier& c, const LabeledDataset& data,
                                          const AttackConfig& cfg, std::mt19937_64& rng,
                                          std::size_t num_bins) {
    EntropyProfile p;
    Tensor x = Tensor::leaf({data.n, data.d}, data.inputs, false);
    p.entropy = entropy_per_example(softmax_probs(c.logits(x))).values();
    AdvResult adv = pgd(c, data.inputs, data.n, data.labels, cfg, rng);
    p.attacked = adv.success;

    double sr = 0, sn = 0;
    std::size_t nr = 0, nn = 0;
    for (std::size_t i = 0; i < data.n; ++i) {
        if (p.attacked[i]) {
            sn += p.entropy[i];
            ++nn;
        } else {
            sr += p.entropy[i];
            ++nr;
        }
    }
    p.mean_gap = (nn ? sn / nn : 0.0) - (nr ? sr / nr : 0.0);

    p.bin_lo = 0.0;
    p.bin_hi = std::log(static_cast<double>(c.num_classes()));
    p.bins_robust.assign(num_bins, 0);
    p.bins_nonrobust.assign(num_bins, 0);
    for (std::size_t i = 0; i < data.n; ++i) {
        double t = (p.entropy[i] - p.bin_lo) / (p.bin_hi - p.bin_lo);
        auto bin = static_cast<std::size_t>(std::clamp(t, 0.0, 1.0 - 1e-12) * num_bins);
        (p.attacked[i] ? p.bins_nonrobust : p.bins_robust)[bin]++;
    }
    return p;
}

void write_entropy_profile_csv(const EntropyProfile& p, const std::string& path) {
    auto out = open_csv(path, "example,entropy,attacked");
    for (std::size_t i = 0; i < p.entropy.size(); ++i) {
        out << i << ',' << fmt_double(p.entropy[i]) << ',' << int(p.attacked[i]) << "\n";
    }
    out << "# mean_gap," << fmt_double(p.mean_gap) << ",\n";
    for (std::size_t b = 0; b < p.bins_robust.size(); ++b) {
        out << "# bin" << b << ',' << p.bins_robust[b] << ',' << p.bins_nonrobust[b] << "\n";
    }
}

MinPertProfile min_perturbation_profile(const Classifier& c, const LabeledDataset& data,
                                        double eps_max, double tol, std::mt19937_64& rng) {
    MinPertProfile p;
    Tensor x = Tensor::leaf({data.n, data.d}, data.inputs, false);
    p.entropy = entropy_per_example(softmax_probs(c.logits(x))).values();
    std::vector<double> ent_ok, eps_ok;
    for (std::size_t i = 0; i < data.n; ++i) {
        auto r = min_perturbation(c, data.row(i), data.labels[i], eps_max, tol, rng);
        p.min_eps.push_back(r);
        if (r) {
            ent_ok.push_back(p.entropy[i]);
            eps_ok.push_back(*r);
        } else {
            ++p.sentinel_count;
        }
    }
    p.spearman = ent_ok.size() >= 3 ? spearman(ent_ok, eps_ok) : 0.0;
    return p;
}

void write_minpert_profile_csv(const MinPertProfile& p, const std::string& path) {
    auto out = open_csv(path, "example,entropy,min_eps");
    for (std::size_t i = 0; i < p.entropy.size(); ++i) {
        out << i << ',' << fmt_double(p.entropy[i]) << ','
            << (p.min_eps[i] ? fmt_double(*p.min_eps[i]) : std::string("robust")) << "\n";
    }
    out << "# spearman," << fmt_double(p.spearman) << ',' << p.sentinel_count << "\n";
}

LossSurface input_loss_surface(const Classifier& c, const std::vector<double>& x, int y,
                               const AttackConfig& cfg, std::size_t resolution,
                               std::mt19937_64& rng) {
    if (resolution < 2 || resolution % 2 == 0)
        throw TensorError("input_loss_surface: resolution must be odd so the grid includes (0,0)");
    const std::size_t d = c.input_dim();

    // v: PGD^10 perturbation direction; r: random sign direction. Both unit L-inf.
    AttackConfig acfg = cfg;
    acfg.steps = 10;
    AdvResult adv = pgd(c, x, 1, {y}, acfg, rng);
    std::vector<double> v(d), r(d);
    double vmax = 0;
    for (std::size_t i = 0; i < d; ++i) {
        v[i] = adv.x_adv[i] - x[i];
        vmax = std::max(vmax, std::abs(v[i]));
    }
    if (vmax > 0)
        for (double& e : v) e /= vmax;
    std::uniform_int_distribution<int> coin(0, 1);
    for (double& e : r) e = coin(rng) ? 1.0 : -1.0;

    LossSurface s;
    s.resolution = resolution;
    for (std::size_t i = 0; i < resolution; ++i) {
        s.deltas.push_back(-cfg.epsilon +
                           2.0 * cfg.epsilon * static_cast<double>(i) / (resolution - 1));
    }
    std::vector<double> pt(d);
    for (double d1 : s.deltas) {
        for (double d2 : s.deltas) {
            for (std::size_t i = 0; i < d; ++i) {
                pt[i] = std::clamp(x[i] + d1 * v[i] + d2 * r[i], 0.0, 1.0);
            }
            // Grid center must be the exact clean loss.
            if (d1 == 0.0 && d2 == 0.0) pt = x;
            Tensor leaf = Tensor::leaf({1, d}, pt, false);
            s.loss.push_back(cross_entropy(softmax_probs(c.logits(leaf)), {y}).item());
        }
    }
    return s;
}

void write_input_surface_csv(const LossSurface& s, const std::string& path) {
    auto out = open_csv(path, "delta1,delta2,loss");
    std::size_t k = 0;
    for (double d1 : s.deltas) {
        for (double d2 : s.deltas) {
            out << fmt_double(d1) << ',' << fmt_double(d2) << ',' << fmt_double(s.loss[k++]) << "\n";
        }
    }
}

WeightSurface weight_loss_surface(Classifier& c, const LabeledDataset& batch,
                                  const std::vector<double>& magnitudes, std::size_t directions,
                                  const AttackConfig& cfg, std::mt19937_64& rng) {
    WeightSurface s;
    s.magnitudes = magnitudes;
    s.loss.assign(magnitudes.size(), 0.0);

    std::vector<std::vector<double>> theta0;
    for (auto& p : c.params()) theta0.push_back(p.tensor.values());

    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t dir = 0; dir < directions; ++dir) {
        // Filter-normalized direction: per tensor, scale to the tensor's norm.
        std::vector<std::vector<double>> d;
        for (std::size_t pi = 0; pi < theta0.size(); ++pi) {
            std::vector<double> v(theta0[pi].size());
            double dn = 0, tn = 0;
            for (auto& e : v) {
                e = gauss(rng);
                dn += e * e;
            }
            for (double t : theta0[pi]) tn += t * t;
            const double scale = dn > 0 ? std::sqrt(tn / dn) : 0.0;
            for (auto& e : v) e *= scale;
            d.push_back(std::move(v));
        }
        for (std::size_t mi = 0; mi < magnitudes.size(); ++mi) {
            for (std::size_t pi = 0; pi < theta0.size(); ++pi) {
                auto& vals = c.params()[pi].tensor.mutable_values();
                for (std::size_t j = 0; j < vals.size(); ++j)
                    vals[j] = theta0[pi][j] + magnitudes[mi] * d[pi][j];
            }
            AttackConfig acfg = cfg;
            acfg.steps = 10;
            std::mt19937_64 attack_rng(rng()); // adversarial examples regenerated at each theta
            AdvResult adv = pgd(c, batch.inputs, batch.n, batch.labels, acfg, attack_rng);
            Tensor leaf = Tensor::leaf({batch.n, batch.d}, adv.x_adv, false);
            s.loss[mi] += cross_entropy(softmax_probs(c.logits(leaf)), batch.labels).item();
        }
    }
    for (auto& l : s.loss) l /= static_cast<double>(directions);
    for (std::size_t pi = 0; pi < theta0.size(); ++pi)
        c.params()[pi].tensor.mutable_values() = theta0[pi];
    return s;
}

void write_weight_surface_csv(const WeightSurface& s, const std::string& path) {
    auto out = open_csv(path, "magnitude,adv_loss");
    for (std::size_t i = 0; i < s.magnitudes.size(); ++i) {
        out << fmt_double(s.magnitudes[i]) << ',' << fmt_double(s.loss[i]) << "\n";
    }
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < idx.size()) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

} // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 3) throw TensorError("spearman: need matched vectors of size >= 3");
    auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double num = 0, da = 0, db = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    if (da == 0 || db == 0) return 0.0;
    return num / std::sqrt(da * db);
}

double permutation_test_greater(const std::vector<double>& a, const std::vector<double>& b,
                                std::size_t permutations, std::uint64_t seed) {
    if (a.empty() || b.empty()) return 1.0;
    auto mean_of = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    const double observed = mean_of(a) - mean_of(b);
    std::vector<double> pool = a;
    pool.insert(pool.end(), b.begin(), b.end());
    std::mt19937_64 rng(seed);
    std::size_t at_least = 0;
    for (std::size_t p = 0; p < permutations; ++p) {
        std::shuffle(pool.begin(), pool.end(), rng);
        double sa = std::accumulate(pool.begin(), pool.begin() + static_cast<long>(a.size()), 0.0);
        double sb = std::accumulate(pool.begin() + static_cast<long>(a.size()), pool.end(), 0.0);
        const double diff = sa / static_cast<double>(a.size()) - sb / static_cast<double>(b.size());
        if (diff >= observed) ++at_least;
    }
    return (static_cast<double>(at_least) + 1.0) / (static_cast<double>(permutations) + 1.0);
}

} // namespace ibat
