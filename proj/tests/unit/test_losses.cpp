#include <doctest.h>

#include <cmath>
#include <random>

#include "nmhebb/gradcheck.hpp"
#include "nmhebb/losses.hpp"

using namespace nmhebb;
using ad::Graph;
using ad::Var;

namespace {

Tensor<double> uniform(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor<double> t(std::move(s));
    for (auto& v : t.values()) v = u(rng);
    return t;
}

// Brute-force references, written independently of the graph code.
double ref_ce(const Tensor<double>& logits, const std::vector<int>& y) {
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    long double total = 0;
    for (std::size_t n = 0; n < N; ++n) {
        long double z = 0;
        for (std::size_t k = 0; k < K; ++k) z += std::exp(static_cast<long double>(logits[n * K + k]));
        total += std::log(z) - logits[n * K + static_cast<std::size_t>(y[n])];
    }
    return static_cast<double>(total / N);
}

double ref_hebb(const Tensor<double>& a, const Tensor<double>& w) {
    const std::size_t N = a.dim(0), C = a.dim(1), hw = a.dim(2) * a.dim(3), per = w.size() / w.dim(0);
    double r = 0;
    for (std::size_t f = 0; f < C; ++f) {
        double am = 0, wm = 0;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t j = 0; j < hw; ++j) am += a[(n * C + f) * hw + j];
        for (std::size_t j = 0; j < per; ++j) wm += w[f * per + j];
        am /= static_cast<double>(N * hw);
        wm /= static_cast<double>(per);
        r += (am - wm) * (am - wm);
    }
    return r / static_cast<double>(C);
}

double ref_nu(const NeuromodulatorState<double>& nm, double ce) {
    const auto& w1 = nm.params[0].value;
    const auto& b1 = nm.params[1].value;
    const auto& w2 = nm.params[2].value;
    const auto& b2 = nm.params[3].value;
    double o = b2[0];
    for (std::size_t j = 0; j < 8; ++j) o += w2[j] * std::max(0.0, w1[j] * ce + b1[j]);
    return 1.0 / (1.0 + std::exp(-o));
}

double ref_margin(const Tensor<double>& a, const Tensor<double>& b, const std::vector<std::uint8_t>& same, double m) {
    const std::size_t P = a.dim(0), D = a.dim(1);
    double total = 0;
    for (std::size_t p = 0; p < P; ++p) {
        double d2 = 0;
        for (std::size_t j = 0; j < D; ++j) d2 += (a[p * D + j] - b[p * D + j]) * (a[p * D + j] - b[p * D + j]);
        if (same[p])
            total += d2;
        else {
            const double h = std::max(0.0, m - std::sqrt(d2));
            total += h * h;
        }
    }
    return total / static_cast<double>(P);
}

ModelState<double> scalar_model(double v) {
    ModelState<double> m;
    m.params.push_back({"a", Tensor<double>({1}, {v})});
    return m;
}

ForwardTaps const_taps(Graph<double>& g, const Tensor<double>& logits, const Tensor<double>& emb,
                       const Tensor<double>& act, Var weight) {
    return {g.constant(logits), g.constant(emb), g.constant(act), weight};
}

}  // namespace

TEST_CASE("cross_entropy oracles") {
    Graph<double> g;
    const std::vector<int> y0{3};
    CHECK(std::abs(g.value(cross_entropy(g, g.constant(Tensor<double>({1, 10}, 0.7)), std::span<const int>(y0)))[0] -
                   std::log(10.0)) < 1e-9);

    const std::vector<int> yz{0};
    const double big = g.value(cross_entropy(g, g.constant(Tensor<double>({1, 2}, {1000, 0})), std::span<const int>(yz)))[0];
    CHECK(std::isfinite(big));
    CHECK(big < 1e-12);

    auto logits = uniform({6, 5}, 3, -4, 4);
    const std::vector<int> y{0, 4, 2, 2, 1, 3};
    const double v = g.value(cross_entropy(g, g.constant(logits), std::span<const int>(y)))[0];
    CHECK(std::abs(v - ref_ce(logits, y)) < 1e-10);

    const std::vector<int> bad{5};
    CHECK_THROWS_AS(cross_entropy(g, g.constant(Tensor<double>({1, 5})), std::span<const int>(bad)), DataError);
    const std::vector<int> neg{-1};
    CHECK_THROWS_AS(cross_entropy(g, g.constant(Tensor<double>({1, 5})), std::span<const int>(neg)), DataError);
}

TEST_CASE("cross_entropy gradient") {
    Graph<double> g;
    auto l = g.parameter(uniform({4, 3}, 9, -2, 2));
    const std::vector<int> y{2, 0, 1, 1};
    auto out = cross_entropy(g, l, std::span<const int>(y));
    const Var ps[] = {l};
    CHECK(ad::check_gradients(g, out, ps, 1e-6).max_rel_error < 1e-6);
}

TEST_CASE("hebbian_regularizer oracles") {
    Graph<double> g;
    SUBCASE("aligned means") {
        auto r = hebbian_regularizer(g, g.constant(Tensor<double>({2, 3, 4, 4}, 0.25)),
                                     g.constant(Tensor<double>({3, 2, 3, 3}, 0.25)));
        CHECK(g.value(r)[0] == 0.0);
    }
    SUBCASE("unit gap") {
        auto r = hebbian_regularizer(g, g.constant(Tensor<double>({1, 1, 2, 2}, 1.0)),
                                     g.constant(Tensor<double>({1, 1, 3, 3}, 0.0)));
        CHECK(g.value(r)[0] == 1.0);
    }
    SUBCASE("random tensors against a double loop, and finite differences") {
        auto a = uniform({2, 4, 5, 5}, 21, 0, 2);
        auto w = uniform({4, 3, 3, 3}, 22);
        auto va = g.parameter(a), vw = g.parameter(w);
        auto r = hebbian_regularizer(g, va, vw);
        CHECK(std::abs(g.value(r)[0] - ref_hebb(a, w)) < 1e-10);
        const Var ps[] = {va, vw};
        CHECK(ad::check_gradients(g, r, ps, 1e-6).max_rel_error < 1e-5);
    }
    SUBCASE("max_per_map statistic") {
        // maps with spatial maxima 2 and 4 -> abar = 3; wbar = 1 -> (3-1)^2
        Tensor<double> a({2, 1, 2, 2}, {0, 2, 1, 1, 4, 0, 0, 0});
        auto r = hebbian_regularizer(g, g.constant(a), g.constant(Tensor<double>({1, 1, 1, 1}, 1.0)), HebbStat::max_per_map);
        CHECK(g.value(r)[0] == 4.0);
    }
    SUBCASE("channel mismatch") {
        CHECK_THROWS_AS(hebbian_regularizer(g, g.constant(Tensor<double>({1, 2, 2, 2})),
                                            g.constant(Tensor<double>({3, 2, 3, 3}))),
                        ShapeError);
    }
}

TEST_CASE("neuromodulator oracles") {
    Graph<double> g;
    auto zero = NeuromodulatorState<double>::zeros();
    auto ce = g.constant(Tensor<double>({}, 1.7));
    CHECK(g.value(neuromodulator(g, bind_neuromodulator(g, zero), ce))[0] == 0.5);
    CHECK(neuromodulator_value(zero, 3.0) == 0.5);

    // hidden weights 1, biases 0, every output weight s: nu = sigmoid(8 * s * relu(L))
    auto hand = NeuromodulatorState<double>::zeros();
    const double s = 0.05;
    for (auto& v : hand.params[0].value.values()) v = 1.0;
    for (auto& v : hand.params[2].value.values()) v = s;
    auto one = g.constant(Tensor<double>({}, 1.0));
    const double nu = g.value(neuromodulator(g, bind_neuromodulator(g, hand), one))[0];
    CHECK(std::abs(nu - 1.0 / (1.0 + std::exp(-8.0 * s * 1.0))) < 1e-15);
    CHECK(std::abs(neuromodulator_value(hand, 1.0) - nu) < 1e-15);

    auto nm = NeuromodulatorState<double>::init(5);
    for (double L = 0.0; L <= 100.0; L += 0.5) {
        const double v = neuromodulator_value(nm, L);
        CHECK(v > 0.0);
        CHECK(v < 1.0);
        CHECK(std::abs(v - ref_nu(nm, L)) < 1e-12);
    }
}

TEST_CASE("neuromodulator gradient w.r.t. phi") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        Graph<double> g;
        auto nm = NeuromodulatorState<double>::init(seed);
        // biases away from zero so the check covers them too
        for (auto& v : nm.params[1].value.values()) v = 0.3;
        nm.params[3].value[0] = -0.2;
        auto phi = bind_neuromodulator(g, nm);
        auto nu = neuromodulator(g, phi, g.constant(Tensor<double>({}, 1.3)));
        CHECK(ad::check_gradients(g, nu, phi, 1e-6).max_rel_error < 1e-5);
    }
}

TEST_CASE("pairwise_margin_loss oracles") {
    Graph<double> g;
    auto e = uniform({1, 6}, 4);
    const std::vector<std::uint8_t> same{1}, diff{0};
    CHECK(g.value(pairwise_margin_loss(g, g.constant(e), g.constant(e), std::span<const std::uint8_t>(same), 1.0))[0] == 0.0);
    CHECK(g.value(pairwise_margin_loss(g, g.constant(e), g.constant(e), std::span<const std::uint8_t>(diff), 1.0))[0] == 1.0);

    SUBCASE("satisfied margin: zero loss and zero gradient") {
        auto a = g.parameter(Tensor<double>({1, 2}, {0, 0}));
        auto b = g.parameter(Tensor<double>({1, 2}, {3, 4}));  // distance 5
        auto l = pairwise_margin_loss(g, a, b, std::span<const std::uint8_t>(diff), 5.0);
        CHECK(g.value(l)[0] == 0.0);
        g.backward(l);
        for (double v : g.grad(a)) CHECK(v == 0.0);
        for (double v : g.grad(b)) CHECK(v == 0.0);
    }
    SUBCASE("embeddings scaled to zero") {
        Tensor<double> z({2, 5}, 0.0);
        const std::vector<std::uint8_t> flags{1, 0};
        const std::vector<std::uint8_t> all_same{1, 1};
        const std::vector<std::uint8_t> all_diff{0, 0};
        CHECK(g.value(pairwise_margin_loss(g, g.constant(z), g.constant(z), std::span<const std::uint8_t>(all_same), 1.5))[0] == 0.0);
        CHECK(g.value(pairwise_margin_loss(g, g.constant(z), g.constant(z), std::span<const std::uint8_t>(all_diff), 1.5))[0] == 2.25);
        CHECK(g.value(pairwise_margin_loss(g, g.constant(z), g.constant(z), std::span<const std::uint8_t>(flags), 1.5))[0] == 1.125);
    }
    SUBCASE("random pairs against the formula, and finite differences") {
        auto a = uniform({4, 3}, 30), b = uniform({4, 3}, 31);
        const std::vector<std::uint8_t> flags{1, 0, 0, 1};
        auto va = g.parameter(a), vb = g.parameter(b);
        auto l = pairwise_margin_loss(g, va, vb, std::span<const std::uint8_t>(flags), 2.0);
        CHECK(std::abs(g.value(l)[0] - ref_margin(a, b, flags, 2.0)) < 1e-12);
        const Var ps[] = {va, vb};
        CHECK(ad::check_gradients(g, l, ps, 1e-6).max_rel_error < 1e-5);
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(pairwise_margin_loss(g, g.constant(Tensor<double>({1, 3})), g.constant(Tensor<double>({1, 4})),
                                             std::span<const std::uint8_t>(same), 1.0),
                        ShapeError);
    }
}

TEST_CASE("consolidation_penalty oracles") {
    Graph<double> g;
    auto m = scalar_model(1.0);
    auto p = bind_parameters(g, m);
    CHECK(g.value(consolidation_penalty(g, p, m))[0] == 0.0);
    CHECK(g.value(consolidation_penalty(g, p, scalar_model(3.0)))[0] == 4.0);

    auto model = build_tiny_vgg<double>(4, 3, 16, 1);
    auto frozen = model;
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0, 0.01);
    long double brute = 0;
    for (auto& t : frozen.params)
        for (auto& v : t.value.values()) v += n(rng);
    for (std::size_t i = 0; i < model.params.size(); ++i)
        for (std::size_t j = 0; j < model.params[i].value.size(); ++j) {
            const long double d = model.params[i].value[j] - frozen.params[i].value[j];
            brute += d * d;
        }
    Graph<double> h;
    auto hp = bind_parameters(h, model);
    CHECK(std::abs(h.value(consolidation_penalty(h, hp, frozen))[0] - static_cast<double>(brute)) < 1e-10);

    auto longer = scalar_model(0.0);
    longer.params.push_back({"b", Tensor<double>({1})});
    CHECK_THROWS_AS(consolidation_penalty(g, p, longer), ShapeError);
    ModelState<double> reshaped;
    reshaped.params.push_back({"a", Tensor<double>({2})});
    CHECK_THROWS_AS(consolidation_penalty(g, p, reshaped), ShapeError);
}

TEST_CASE("phase1_loss composition") {
    auto nm = NeuromodulatorState<double>::init(7);
    const std::vector<int> y{1, 0, 3};
    auto logits = uniform({3, 4}, 40, -2, 2);
    auto act = uniform({3, 2, 4, 4}, 41, 0, 1);
    auto w = uniform({2, 1, 3, 3}, 42);

    SUBCASE("gate off") {
        Graph<double> g;
        LossConfig cfg;
        cfg.lambda_hebb1 = 0.0;
        auto taps = const_taps(g, logits, Tensor<double>({3, 8}), act, g.parameter(w));
        auto lb = phase1_loss(g, taps, std::span<const int>(y), bind_neuromodulator(g, nm), cfg);
        auto ce = cross_entropy(g, taps.logits, std::span<const int>(y));
        CHECK(lb.values.total == g.value(ce)[0]);
    }
    SUBCASE("aligned means") {
        Graph<double> g;
        auto taps = const_taps(g, logits, Tensor<double>({3, 8}), Tensor<double>({3, 2, 4, 4}, 0.5),
                               g.parameter(Tensor<double>({2, 1, 3, 3}, 0.5)));
        auto lb = phase1_loss(g, taps, std::span<const int>(y), bind_neuromodulator(g, nm), LossConfig{});
        CHECK(lb.values.total == lb.values.ce);
        CHECK(lb.values.hebbian == 0.0);
    }
    SUBCASE("recomposition") {
        Graph<double> g;
        LossConfig cfg;
        cfg.lambda_hebb1 = 0.7;
        auto taps = const_taps(g, logits, Tensor<double>({3, 8}), act, g.parameter(w));
        auto lb = phase1_loss(g, taps, std::span<const int>(y), bind_neuromodulator(g, nm), cfg);
        const double ce = ref_ce(logits, y);
        const double r = ref_hebb(act, w);
        const double nu = ref_nu(nm, ce);
        CHECK(std::abs(lb.values.total - (ce + 0.7 * nu * r)) < 1e-8);
        CHECK(std::abs(lb.values.total - (lb.values.ce + lb.values.hebb_term)) < 1e-12);
        CHECK(lb.values.total >= lb.values.ce);
        CHECK(lb.values.hebbian >= 0.0);
        CHECK(g.value(lb.total)[0] == lb.values.total);
    }
}

TEST_CASE("phase2_loss composition") {
    auto nm = NeuromodulatorState<double>::init(8);
    const std::vector<int> ya{1, 2}, yb{1, 0};
    const std::vector<std::uint8_t> same{1, 0};
    auto la = uniform({2, 3}, 50, -2, 2), lb_ = uniform({2, 3}, 51, -2, 2);
    auto ea = uniform({2, 4}, 52), eb = uniform({2, 4}, 53);
    auto aa = uniform({2, 2, 3, 3}, 54, 0, 1), ab = uniform({2, 2, 3, 3}, 55, 0, 1);
    auto w = uniform({2, 1, 3, 3}, 56);
    auto theta = scalar_model(0.4);
    auto frozen = scalar_model(0.1);

    auto run = [&](LossConfig cfg, bool swap, const Tensor<double>& act_a, const Tensor<double>& act_b,
                   const ModelState<double>& fz, const Tensor<double>& weight) {
        Graph<double> g;
        auto wv = g.parameter(weight);
        auto ta = const_taps(g, la, ea, act_a, wv);
        auto tb = const_taps(g, lb_, eb, act_b, wv);
        auto p = bind_parameters(g, theta);
        auto phi = bind_neuromodulator(g, nm);
        if (swap)
            return phase2_loss(g, tb, ta, std::span<const int>(yb), std::span<const int>(ya),
                               std::span<const std::uint8_t>(same), p, fz, phi, cfg)
                .values;
        return phase2_loss(g, ta, tb, std::span<const int>(ya), std::span<const int>(yb),
                           std::span<const std::uint8_t>(same), p, fz, phi, cfg)
            .values;
    };

    const double ce = ref_ce(la, ya) + ref_ce(lb_, yb);
    SUBCASE("metric, consolidation and hebbian weights off") {
        LossConfig cfg;
        cfg.lambda_metric = cfg.lambda_cons = cfg.lambda_hebb2 = 0.0;
        auto v = run(cfg, false, aa, ab, frozen, w);
        CHECK(v.total == v.ce_a + v.ce_b);
    }
    SUBCASE("theta equals frozen and aligned means") {
        auto v = run(LossConfig{}, false, Tensor<double>({2, 2, 3, 3}, 0.2), Tensor<double>({2, 2, 3, 3}, 0.2), theta,
                     Tensor<double>({2, 1, 3, 3}, 0.2));
        CHECK(v.total == v.ce_a + v.ce_b + 0.5 * v.metric);
    }
    SUBCASE("recomposition and symmetry") {
        LossConfig cfg;
        cfg.lambda_cons = 0.3;
        cfg.lambda_hebb2 = 0.6;
        auto v = run(cfg, false, aa, ab, frozen, w);
        const double nu = ref_nu(nm, ce / 2);
        const double expect = ce + 0.5 * ref_margin(ea, eb, same, 1.0) +
                              nu * (0.3 * 0.09 + 0.6 * 0.5 * (ref_hebb(aa, w) + ref_hebb(ab, w)));
        CHECK(std::abs(v.total - expect) < 1e-8);
        CHECK(std::abs(v.total - (v.ce + v.metric_term + v.cons_term + v.hebb_term)) < 1e-12);
        auto s = run(cfg, true, aa, ab, frozen, w);
        CHECK(std::abs(s.total - v.total) < 1e-14);
        for (double t : {v.ce_a, v.ce_b, v.hebbian, v.metric, v.consolidation}) CHECK(t >= 0.0);
    }
}
