#include "nmhebb/fidelity.hpp"

#include <chrono>
#include <random>

#include "nmhebb/losses.hpp"

namespace nmhebb {

std::vector<FidelityCase> run_gradient_fidelity(const FidelityOptions& opt) {
    std::vector<FidelityCase> out;
    for (Arch arch : {Arch::tiny_vgg, Arch::mini_resnet}) {
        auto model = build_model<double>(arch, 4, 3, 16, opt.seed);
        auto nm = NeuromodulatorState<double>::init(opt.seed + 1);
        // nonzero biases so every phi element carries a generic gradient
        for (auto& v : nm.params[1].value.values()) v = 0.1;
        nm.params[3].value[0] = -0.1;

        std::mt19937_64 rng(opt.seed + 2);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        Tensor<double> x({2, 3, 16, 16});
        for (auto& v : x.values()) v = u(rng);
        // theta_frozen away from theta so the consolidation gradient is not zero
        auto frozen = model;
        std::normal_distribution<double> jitter(0.0, 0.01);
        for (auto& t : frozen.params)
            for (auto& v : t.value.values()) v += jitter(rng);

        const std::vector<int> labels{0, 1};
        const std::vector<int> la{0}, lb{1};
        const std::vector<std::uint8_t> same{0};
        LossConfig cfg;

        ad::Graph<double> g;
        auto params = bind_parameters(g, model);
        auto phi = bind_neuromodulator(g, nm);
        auto taps = forward(g, model, params, g.constant(x), {ad::Mode::train, false});
        auto l1 = phase1_loss(g, taps, std::span<const int>(labels), phi, cfg);
        auto [ta, tb] = split_taps(g, taps, 1);
        auto l2 = phase2_loss(g, ta, tb, std::span<const int>(la), std::span<const int>(lb),
                              std::span<const std::uint8_t>(same), params, frozen, phi, cfg);

        std::vector<ad::Var> all = params;
        all.insert(all.end(), phi.begin(), phi.end());
        const ad::Var outputs[] = {l1.total, l2.total};
        const auto t0 = std::chrono::steady_clock::now();
        auto results = ad::check_gradients(g, outputs, all, opt.eps, opt.floor);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        for (std::size_t o = 0; o < 2; ++o) {
            FidelityCase c{arch, o == 0 ? "phase1" : "phase2", results[o], "", secs, false};
            const std::size_t wp = c.result.worst_param;
            c.worst_name = wp < model.params.size() ? model.params[wp].name : nm.params[wp - model.params.size()].name;
            c.passed = c.result.max_rel_error < opt.tolerance;
            out.push_back(std::move(c));
        }
    }
    return out;
}

}  // namespace nmhebb
