#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "nmhebb/data.hpp"

using namespace nmhebb;

namespace {

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

std::vector<std::uint8_t> idx_images(std::uint32_t n, std::uint32_t h, std::uint32_t w) {
    std::vector<std::uint8_t> b;
    put_be32(b, 0x00000803);
    put_be32(b, n);
    put_be32(b, h);
    put_be32(b, w);
    for (std::uint32_t i = 0; i < n * h * w; ++i) b.push_back(static_cast<std::uint8_t>((i * 7) % 256));
    return b;
}

std::vector<std::uint8_t> idx_labels(std::vector<std::uint8_t> y) {
    std::vector<std::uint8_t> b;
    put_be32(b, 0x00000801);
    put_be32(b, static_cast<std::uint32_t>(y.size()));
    b.insert(b.end(), y.begin(), y.end());
    return b;
}

std::multiset<std::vector<float>> rows(const Dataset& d) {
    std::multiset<std::vector<float>> out;
    const std::size_t D = d.image_numel();
    for (std::size_t i = 0; i < d.size(); ++i) {
        std::vector<float> r(d.images.data() + i * D, d.images.data() + (i + 1) * D);
        r.push_back(static_cast<float>(d.labels[i]));
        out.insert(std::move(r));
    }
    return out;
}

}  // namespace

TEST_CASE("idx: 2x28x28 fixture") {
    auto im = idx_images(2, 28, 28);
    auto lb = idx_labels({3, 1});
    auto ds = load_idx_bytes(im, lb, 10);
    CHECK(ds.images.shape() == Shape{2, 1, 28, 28});
    CHECK(ds.labels == std::vector<int>{3, 1});
    for (std::size_t i = 0; i < 2 * 28 * 28; ++i) CHECK(ds.images[i] == static_cast<float>(im[16 + i]) / 255.0f);
    // bit-exact on reload
    auto again = load_idx_bytes(im, lb, 10);
    CHECK(again.images == ds.images);
}

TEST_CASE("idx: error cases") {
    auto im = idx_images(2, 28, 28);
    auto lb = idx_labels({0, 1});
    auto bad = im;
    bad[3] = 0x02;
    CHECK_THROWS_AS(load_idx_bytes(bad, lb), DataError);
    bad = im;
    bad[2] = 0x0D;
    CHECK_THROWS_AS(load_idx_bytes(bad, lb), DataError);
    bad = im;
    bad.pop_back();
    CHECK_THROWS_AS(load_idx_bytes(bad, lb), DataError);
    CHECK_THROWS_WITH_AS(load_idx_bytes(std::span(im).first(10), lb), doctest::Contains("byte offset"), DataError);
    CHECK_THROWS_AS(load_idx_bytes(im, idx_labels({0, 1, 1})), DataError);
    CHECK_THROWS_AS(load_idx_bytes(im, idx_labels({0, 12}), 10), DataError);
    CHECK_THROWS_AS(load_idx("/nonexistent/a", "/nonexistent/b"), DataError);
}

TEST_CASE("idx: files on disk") {
    auto im = idx_images(2, 4, 5);
    auto lb = idx_labels({0, 1});
    const std::string pi = "nmhebb_test_idx_images", pl = "nmhebb_test_idx_labels";
    std::ofstream(pi, std::ios::binary).write(reinterpret_cast<const char*>(im.data()), static_cast<std::streamsize>(im.size()));
    std::ofstream(pl, std::ios::binary).write(reinterpret_cast<const char*>(lb.data()), static_cast<std::streamsize>(lb.size()));
    auto ds = load_idx(pi, pl);
    CHECK(ds.num_classes == 2);
    CHECK(ds.images.shape() == Shape{2, 1, 4, 5});
    CHECK(ds.images == load_idx_bytes(im, lb).images);
    std::remove(pi.c_str());
    std::remove(pl.c_str());
}

TEST_CASE("cifar: hand-built records") {
    std::vector<std::uint8_t> rec(3073);
    rec[0] = 7;
    for (std::size_t j = 0; j < 3072; ++j) rec[1 + j] = static_cast<std::uint8_t>(j / 1024 * 100 + j % 13);
    auto ds = load_cifar_bytes(rec, CifarVariant::cifar10);
    CHECK(ds.num_classes == 10);
    CHECK(ds.labels == std::vector<int>{7});
    CHECK(ds.images.shape() == Shape{1, 3, 32, 32});
    // red plane first, then green, then blue, each row-major
    CHECK(ds.images[0] == 0.0f);
    CHECK(ds.images[5] == 5.0f / 255.0f);
    CHECK(ds.images[1024] == static_cast<float>(100 + 1024 % 13) / 255.0f);
    CHECK(ds.images[2048 + 33] == static_cast<float>(200 + (2048 + 33) % 13) / 255.0f);

    std::vector<std::uint8_t> rec100(3074);
    rec100[0] = 3;   // coarse
    rec100[1] = 42;  // fine
    rec100[2] = 255;
    auto d100 = load_cifar_bytes(rec100, CifarVariant::cifar100);
    CHECK(d100.labels == std::vector<int>{42});
    CHECK(d100.num_classes == 100);
    CHECK(d100.images[0] == 1.0f);

    auto cut = rec;
    cut.pop_back();
    CHECK_THROWS_WITH_AS(load_cifar_bytes(cut, CifarVariant::cifar10), doctest::Contains("byte offset"), DataError);
    CHECK_THROWS_AS(load_cifar_bytes(rec, CifarVariant::cifar100), DataError);
    rec[0] = 10;
    CHECK_THROWS_AS(load_cifar_bytes(rec, CifarVariant::cifar10), DataError);
}

TEST_CASE("augmentation identities") {
    auto ds = generate_synthetic(SyntheticSpec{}, 2, 0);
    Tensor<float> img({1, 3, 16, 16});
    std::copy_n(ds.images.data(), 768, img.data());
    auto orig = img;
    flip_horizontal(img.data(), 3, 16);
    CHECK_FALSE(img == orig);
    CHECK(img[0] == orig[15]);
    flip_horizontal(img.data(), 3, 16);
    CHECK(img == orig);
    pad_crop(img.data(), 3, 16, 4, 4, 4);
    CHECK(img == orig);
    pad_crop(img.data(), 3, 16, 4, 0, 4);  // shift down by 4: top rows are padding
    for (std::size_t x = 0; x < 16; ++x) CHECK(img[x] == 0.0f);
    CHECK(img[4 * 16 + 3] == orig[3]);
    CHECK_THROWS_AS(pad_crop(img.data(), 3, 16, 4, 9, 0), ConfigError);

    auto batch = gather_images(ds, std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
    auto b1 = batch, b2 = batch;
    std::mt19937_64 r1(5), r2(5);
    augment(b1, r1);
    augment(b2, r2);
    CHECK(b1 == b2);
    CHECK(b1.shape() == batch.shape());
    for (float v : b1.values()) CHECK((v >= 0.0f && v <= 1.0f));
    auto none = batch;
    std::mt19937_64 r3(5);
    augment(none, r3, {false, false, 4});
    CHECK(none == batch);
}

TEST_CASE("stratified split") {
    SyntheticSpec spec;
    spec.num_classes = 3;
    auto ds = generate_synthetic(spec, 100, 0);
    auto [a, b] = stratified_split(ds, 0.8, 9);
    for (auto c : a.class_counts()) CHECK(c == 80);
    for (auto c : b.class_counts()) CHECK(c == 20);
    auto ra = rows(a), rb = rows(b), all = rows(ds);
    auto un = ra;
    un.insert(rb.begin(), rb.end());
    CHECK(un == all);
    std::vector<std::vector<float>> common;
    std::set_intersection(ra.begin(), ra.end(), rb.begin(), rb.end(), std::back_inserter(common));
    CHECK(common.empty());
    auto [a2, b2] = stratified_split(ds, 0.8, 9);
    CHECK(a2.images == a.images);
    CHECK(b2.labels == b.labels);
    CHECK_THROWS_AS(stratified_split(ds, 1.0, 1), ConfigError);
}

TEST_CASE("normalization round trip") {
    auto s = synthetic_splits(SyntheticSpec{.train_per_class = 40, .val_per_class = 10, .test_per_class = 10});
    CHECK(s.train.mean.size() == 3);
    CHECK(s.val.mean == s.train.mean);
    CHECK(s.test.stddev == s.train.stddev);
    auto x = s.test.images;
    normalize(x, s.train.mean, s.train.stddev);
    denormalize(x, s.train.mean, s.train.stddev);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - s.test.images[i]) < 1e-6f);
    auto t = s.train.images;
    normalize(t, s.train.mean, s.train.stddev);
    double m = 0;
    for (std::size_t n = 0; n < s.train.size(); ++n)
        for (std::size_t j = 0; j < 256; ++j) m += t[n * 768 + j];
    CHECK(std::abs(m / static_cast<double>(s.train.size() * 256)) < 1e-4);
}

TEST_CASE("synthetic generator") {
    SyntheticSpec spec;
    auto a = generate_synthetic(spec, 20, 0);
    auto b = generate_synthetic(spec, 20, 0);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    CHECK_FALSE(generate_synthetic(spec, 20, 1).images == a.images);
    for (auto c : a.class_counts()) CHECK(c == 20);
    for (float v : a.images.values()) CHECK((v >= 0.0f && v <= 1.0f));
    for (std::size_t i = 0; i < spec.num_classes; ++i)
        for (std::size_t j = i + 1; j < spec.num_classes; ++j) {
            auto ri = spec.recipe(i), rj = spec.recipe(j);
            CHECK((ri.angle != rj.angle || ri.blob_x != rj.blob_x || ri.blob_y != rj.blob_y));
        }
    auto s = synthetic_splits(spec);
    CHECK(s.train.size() == 2000);
    CHECK(s.val.size() == 500);
    CHECK(s.test.size() == 500);
    for (auto c : s.train.class_counts()) CHECK(c == 500);
    CHECK_THROWS_AS(generate_synthetic(SyntheticSpec{.num_classes = 1}, 5, 0), ConfigError);
}

TEST_CASE("noise-free, two classes: nearest centroid is perfect") {
    SyntheticSpec spec;
    spec.num_classes = 2;
    spec.noise = 0.0;
    auto train = generate_synthetic(spec, 200, 0);
    auto test = generate_synthetic(spec, 200, 1);
    CHECK(nearest_centroid_accuracy(train, test) == 1.0);
}
