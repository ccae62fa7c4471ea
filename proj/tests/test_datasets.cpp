#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdint>
#include <fstream>
#include <set>
#include <vector>

#include "ibat/dataset.hpp"

using namespace ibat;

namespace {

void put_be_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

// Writes an IDX image/label pair with pixel (i*rows*cols + r*cols + c) % 256.
void write_idx_fixture(const std::string& img_path, const std::string& lab_path, std::uint32_t n,
                       std::uint32_t rows, std::uint32_t cols, std::uint32_t img_magic = 0x803,
                       std::uint32_t lab_magic = 0x801, bool truncate_images = false) {
    std::ofstream img(img_path, std::ios::binary);
    put_be_u32(img, img_magic);
    put_be_u32(img, n);
    put_be_u32(img, rows);
    put_be_u32(img, cols);
    const std::size_t total = static_cast<std::size_t>(n) * rows * cols;
    for (std::size_t i = 0; i < (truncate_images ? total / 2 : total); ++i) {
        unsigned char px = static_cast<unsigned char>(i % 256);
        img.write(reinterpret_cast<char*>(&px), 1);
    }
    std::ofstream lab(lab_path, std::ios::binary);
    put_be_u32(lab, lab_magic);
    put_be_u32(lab, n);
    for (std::uint32_t i = 0; i < n; ++i) {
        unsigned char y = static_cast<unsigned char>(i % 10);
        lab.write(reinterpret_cast<char*>(&y), 1);
    }
}

} // namespace

TEST_CASE("IDX loader parses headers and scales pixels") {
    write_idx_fixture("/tmp/ibat_img.idx", "/tmp/ibat_lab.idx", 5, 4, 3);
    LabeledDataset d = load_idx("/tmp/ibat_img.idx", "/tmp/ibat_lab.idx");
    CHECK(d.n == 5);
    CHECK(d.d == 12);
    CHECK(d.height == 4);
    CHECK(d.width == 3);
    CHECK(d.channels == 1);
    CHECK(d.num_classes == 10);
    CHECK(d.labels == std::vector<int>{0, 1, 2, 3, 4});
    // Pixel k of the stream has byte value k % 256, scaled by 1/255.
    CHECK(d.inputs[0] == doctest::Approx(0.0));
    CHECK(d.inputs[7] == doctest::Approx(7.0 / 255.0));
    CHECK(d.inputs[12] == doctest::Approx(12.0 / 255.0)); // first pixel of example 1
    for (double v : d.inputs) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("IDX loader rejects bad magic, count mismatch, truncation") {
    write_idx_fixture("/tmp/ibat_badmagic.idx", "/tmp/ibat_lab2.idx", 3, 2, 2, 0x804);
    CHECK_THROWS_AS(load_idx("/tmp/ibat_badmagic.idx", "/tmp/ibat_lab2.idx"), DatasetError);

    write_idx_fixture("/tmp/ibat_img3.idx", "/tmp/ibat_badlab.idx", 3, 2, 2, 0x803, 0x805);
    CHECK_THROWS_AS(load_idx("/tmp/ibat_img3.idx", "/tmp/ibat_badlab.idx"), DatasetError);

    write_idx_fixture("/tmp/ibat_trunc.idx", "/tmp/ibat_lab4.idx", 4, 3, 3, 0x803, 0x801, true);
    CHECK_THROWS_AS(load_idx("/tmp/ibat_trunc.idx", "/tmp/ibat_lab4.idx"), DatasetError);

    // Image header says 4 examples, label file says 2.
    write_idx_fixture("/tmp/ibat_img5.idx", "/tmp/ibat_lab5a.idx", 4, 2, 2);
    write_idx_fixture("/tmp/ibat_img5b.idx", "/tmp/ibat_lab5.idx", 2, 2, 2);
    CHECK_THROWS_AS(load_idx("/tmp/ibat_img5.idx", "/tmp/ibat_lab5.idx"), DatasetError);

    CHECK_THROWS_AS(load_idx("/tmp/ibat_missing.idx", "/tmp/ibat_lab.idx"), DatasetError);
}

TEST_CASE("CIFAR binary loader parses 3073-byte records") {
    const std::size_t n = 3, rec = 3073;
    std::ofstream out("/tmp/ibat_cifar.bin", std::ios::binary);
    for (std::size_t i = 0; i < n; ++i) {
        unsigned char label = static_cast<unsigned char>(i * 3);
        out.write(reinterpret_cast<char*>(&label), 1);
        for (std::size_t j = 0; j < rec - 1; ++j) {
            unsigned char px = static_cast<unsigned char>((i + j) % 256);
            out.write(reinterpret_cast<char*>(&px), 1);
        }
    }
    out.close();
    LabeledDataset d = load_cifar_bin("/tmp/ibat_cifar.bin");
    CHECK(d.n == 3);
    CHECK(d.d == 3072);
    CHECK(d.channels == 3);
    CHECK(d.height == 32);
    CHECK(d.width == 32);
    CHECK(d.labels == std::vector<int>{0, 3, 6});
    CHECK(d.inputs[5] == doctest::Approx(5.0 / 255.0));
    CHECK(d.inputs[3072 + 5] == doctest::Approx(6.0 / 255.0));
}

TEST_CASE("CIFAR loader: empty file warns and yields zero examples") {
    { std::ofstream out("/tmp/ibat_cifar_empty.bin", std::ios::binary); }
    LabeledDataset d = load_cifar_bin("/tmp/ibat_cifar_empty.bin");
    CHECK(d.n == 0);
}

TEST_CASE("CIFAR loader rejects partial records") {
    std::ofstream out("/tmp/ibat_cifar_bad.bin", std::ios::binary);
    std::vector<char> half(3073 + 100, 1);
    out.write(half.data(), static_cast<long>(half.size()));
    out.close();
    CHECK_THROWS_AS(load_cifar_bin("/tmp/ibat_cifar_bad.bin"), DatasetError);
}

TEST_CASE("two moons: layout, label blocks, determinism") {
    LabeledDataset d = gen_two_moons(200, 0.1, 9);
    CHECK(d.n == 200);
    CHECK(d.d == 2);
    CHECK(d.num_classes == 2);
    for (std::size_t i = 0; i < 100; ++i) CHECK(d.labels[i] == 0);
    for (std::size_t i = 100; i < 200; ++i) CHECK(d.labels[i] == 1);
    for (double v : d.inputs) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    LabeledDataset d2 = gen_two_moons(200, 0.1, 9);
    CHECK(d.inputs == d2.inputs);
    LabeledDataset d3 = gen_two_moons(200, 0.1, 10);
    CHECK(d.inputs != d3.inputs);
    CHECK_THROWS_AS(gen_two_moons(7, 0.1, 0), DatasetError);
    CHECK_THROWS_AS(gen_two_moons(8, -0.1, 0), DatasetError);
}

TEST_CASE("two moons with zero noise is separable by shape") {
    // The deterministic skeleton: class 0 upper arc, class 1 lower shifted arc.
    LabeledDataset d = gen_two_moons(400, 0.0, 1);
    LabeledDataset d2 = gen_two_moons(400, 0.0, 77);
    CHECK(d.inputs == d2.inputs); // noise-free draws ignore the seeded jitter
}

TEST_CASE("slice keeps geometry and copies rows") {
    LabeledDataset d = gen_two_moons(100, 0.1, 3);
    LabeledDataset s = d.slice(10, 20);
    CHECK(s.n == 20);
    CHECK(s.d == 2);
    CHECK(s.num_classes == 2);
    CHECK(s.row(0) == d.row(10));
    CHECK(s.labels[0] == d.labels[10]);
}

TEST_CASE("batch iterator covers every index exactly once per epoch") {
    LabeledDataset d = gen_two_moons(50, 0.1, 4);
    BatchIterator it(d, 8, 123);
    for (int epoch = 0; epoch < 2; ++epoch) {
        std::multiset<std::size_t> seen;
        std::size_t total = 0;
        while (auto b = it.next()) {
            CHECK(b->m == b->indices.size());
            CHECK(b->inputs.size() == b->m * d.d);
            CHECK(b->labels.size() == b->m);
            for (std::size_t i : b->indices) seen.insert(i);
            // Batch rows match the dataset rows they index.
            for (std::size_t r = 0; r < b->m; ++r) {
                const auto row = d.row(b->indices[r]);
                for (std::size_t c = 0; c < d.d; ++c)
                    CHECK(b->inputs[r * d.d + c] == row[c]);
            }
            total += b->m;
        }
        CHECK(total == 50);
        CHECK(seen.size() == 50);
        std::size_t distinct = 0;
        for (std::size_t i = 0; i < 50; ++i) distinct += seen.count(i);
        CHECK(distinct == 50);
        it.new_epoch();
    }
}

TEST_CASE("batch iterator is seed deterministic and epochs differ") {
    LabeledDataset d = gen_two_moons(40, 0.1, 4);
    auto first_batch = [&](std::uint64_t seed) {
        BatchIterator it(d, 40, seed);
        return it.next()->indices;
    };
    CHECK(first_batch(5) == first_batch(5));
    BatchIterator it(d, 40, 5);
    auto e1 = it.next()->indices;
    it.new_epoch();
    auto e2 = it.next()->indices;
    CHECK(e1 != e2); // overwhelmingly likely with 40! permutations
    CHECK_THROWS_AS(BatchIterator(d, 0, 1), DatasetError);
}
