#include <doctest.h>

#include <random>

#include "nmhebb/gradcheck.hpp"
#include "nmhebb/losses.hpp"

using namespace nmhebb;

namespace {

template <typename T>
Tensor<T> images(std::size_t n, std::size_t c, std::size_t s, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor<T> t({n, c, s, s});
    for (auto& v : t.values()) v = static_cast<T>(u(rng));
    return t;
}

}  // namespace

TEST_CASE("shape contracts") {
    for (Arch arch : {Arch::tiny_vgg, Arch::mini_resnet}) {
        CAPTURE(arch_name(arch));
        auto m = build_model<float>(arch, 10, 3, 32, 1);
        ad::Graph<float> g;
        auto p = bind_parameters(g, m);
        auto taps = forward(g, m, p, g.constant(images<float>(2, 3, 32, 1)));
        CHECK(g.value(taps.logits).shape() == Shape{2, 10});
        CHECK(g.value(taps.embedding).shape() == Shape{2, 128});
        const auto& a = g.value(taps.hebbian_activation);
        CHECK(a.rank() == 4);
        CHECK(a.dim(1) == g.value(taps.hebbian_weight).dim(0));
        for (float v : a.values()) CHECK(v >= 0.0f);
        CHECK(m.params[m.param_index(m.hebbian_layer + ".w")].value.shape() == g.value(taps.hebbian_weight).shape());
    }
    auto vgg = build_tiny_vgg<float>(10, 3, 32, 1);
    CHECK(vgg.params[vgg.param_index(vgg.hebbian_layer + ".w")].value.dim(0) == 32);
    CHECK(vgg.parameter_count() >= 100000);
    CHECK(vgg.parameter_count() <= 300000);
    auto res = build_mini_resnet<float>(10, 3, 32, 1);
    CHECK(res.hebbian_layer == "s2.b2.conv2");
}

TEST_CASE("parameter layout is seed independent") {
    for (Arch arch : {Arch::tiny_vgg, Arch::mini_resnet}) {
        auto a = build_model<float>(arch, 4, 3, 16, 1);
        auto b = build_model<float>(arch, 4, 3, 16, 99);
        REQUIRE(a.params.size() == b.params.size());
        for (std::size_t i = 0; i < a.params.size(); ++i) {
            CHECK(a.params[i].name == b.params[i].name);
            CHECK(a.params[i].value.shape() == b.params[i].value.shape());
        }
        CHECK(a.parameter_count() == b.parameter_count());
        CHECK_FALSE(a.params[0].value == b.params[0].value);
    }
}

TEST_CASE("unsupported configurations") {
    CHECK_THROWS_AS(build_tiny_vgg<float>(10, 3, 20, 1), ConfigError);
    CHECK_THROWS_AS(build_mini_resnet<float>(1, 3, 16, 1), ConfigError);
    auto m = build_tiny_vgg<float>(4, 3, 16, 1);
    ad::Graph<float> g;
    auto p = bind_parameters(g, m);
    CHECK_THROWS_AS(forward(g, m, p, g.constant(images<float>(2, 3, 28, 1))), ShapeError);
    CHECK_THROWS_AS(forward(g, m, p, g.constant(images<float>(2, 1, 16, 1))), ShapeError);
}

TEST_CASE("residual block with zeroed branch is the identity") {
    auto m = build_mini_resnet<double>(4, 3, 16, 3);
    for (auto& t : m.params)
        if (t.name.rfind("s1.b1.conv", 0) == 0)
            for (auto& v : t.value.values()) v = 0.0;
    ad::Graph<double> g;
    auto p = bind_parameters(g, m);
    auto x = images<double>(2, 16, 16, 4);  // nonnegative, like a post-ReLU input
    for (auto mode : {ad::Mode::eval, ad::Mode::train}) {
        auto y = residual_block(g, m, p, "s1.b1", g.constant(x), {mode, false});
        CHECK(g.value(y) == x);
    }
}

TEST_CASE("eval forward is independent of batch composition") {
    for (Arch arch : {Arch::tiny_vgg, Arch::mini_resnet}) {
        auto m = build_model<double>(arch, 4, 3, 16, 5);
        auto batch = images<double>(3, 3, 16, 6);
        auto all = infer(m, batch);
        auto again = infer(m, batch);
        CHECK(all.logits == again.logits);
        for (std::size_t i = 0; i < 3; ++i) {
            Tensor<double> one({1, 3, 16, 16});
            std::copy_n(batch.data() + i * 768, 768, one.data());
            auto single = infer(m, one);
            for (std::size_t k = 0; k < 4; ++k) CHECK(single.logits[k] == doctest::Approx(all.logits[i * 4 + k]).epsilon(1e-12));
            for (std::size_t k = 0; k < 128; ++k)
                CHECK(single.embeddings[k] == doctest::Approx(all.embeddings[i * 128 + k]).epsilon(1e-12));
        }
    }
}

TEST_CASE("training forward updates running statistics only when asked") {
    auto m = build_mini_resnet<double>(4, 3, 16, 5);
    auto before = m.running.front().stats.mean;
    ad::Graph<double> g;
    auto p = bind_parameters(g, m);
    forward(g, m, p, g.constant(images<double>(2, 3, 16, 1)), {ad::Mode::train, false});
    CHECK(m.running.front().stats.mean == before);
    forward(g, m, p, g.constant(images<double>(2, 3, 16, 1)), {ad::Mode::train, true});
    CHECK_FALSE(m.running.front().stats.mean == before);
}

// The complete every-element check runs in the acceptance suite; here the
// head, the Hebbian layer and one batch-norm layer are covered.
TEST_CASE("forward + cross-entropy gradient on two images") {
    for (Arch arch : {Arch::tiny_vgg, Arch::mini_resnet}) {
        CAPTURE(arch_name(arch));
        auto m = build_model<double>(arch, 4, 3, 16, 11);
        ad::Graph<double> g;
        auto p = bind_parameters(g, m);
        auto taps = forward(g, m, p, g.constant(images<double>(2, 3, 16, 12)), {ad::Mode::train, false});
        const std::vector<int> y{1, 3};
        auto ce = cross_entropy(g, taps.logits, std::span<const int>(y));
        std::vector<ad::Var> subset;
        for (std::size_t i = 0; i < m.params.size(); ++i) {
            const auto& n = m.params[i].name;
            if (n.rfind("fc.", 0) == 0 || n.rfind("embed.", 0) == 0 || n == m.hebbian_layer + ".w" ||
                n.rfind("s2.b2.bn2", 0) == 0)
                subset.push_back(p[i]);
        }
        auto r = ad::check_gradients(g, ce, subset, 1e-5, 1e-6);
        CAPTURE(r.worst_analytic);
        CAPTURE(r.worst_numeric);
        CHECK(r.max_rel_error < 1e-4);
    }
}
