// Acceptance suite: one PASS/FAIL line per criterion.
//   acceptance <path to nmhebb tool> <scratch dir> [--only 1,4,...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>

#include "nmhebb/fidelity.hpp"
#include "nmhebb/harness.hpp"

using namespace nmhebb;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char b[64];
    std::snprintf(b, sizeof b, f, v);
    return b;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

// --- 1 ---------------------------------------------------------------------
Outcome gradient_fidelity() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto cases = run_gradient_fidelity();
    const double sec = seconds_since(t0);
    bool ok = sec < 120.0;
    double worst = 0;
    std::size_t n = 0;
    for (const auto& c : cases) {
        ok = ok && c.passed;
        worst = std::max(worst, c.result.max_rel_error);
        n += c.result.checked;
    }
    return {ok && cases.size() == 4, std::to_string(cases.size()) + " objective/backbone cases, " + std::to_string(n) +
                                         " element checks, max rel error " + fmt("%.2e", worst) + ", " + fmt("%.1f", sec) +
                                         " s"};
}

// --- 2 ---------------------------------------------------------------------
Outcome loss_oracles() {
    std::vector<std::string> failed;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) failed.push_back(what);
    };
    {
        ad::Graph<double> g;
        auto ce = cross_entropy(g, g.constant(Tensor<double>({3, 10}, 0.7)), std::span<const int>(std::vector<int>{0, 4, 9}));
        expect(std::abs(g.value(ce)[0] - std::log(10.0)) <= 1e-9, "uniform CE = ln 10");
    }
    {
        // activation channel means equal kernel means
        ad::Graph<double> g;
        Tensor<double> w({2, 1, 3, 3});
        for (std::size_t i = 0; i < 9; ++i) w[i] = 0.5, w[9 + i] = -0.25 + 0.5 * double(i % 2);
        const double m1 = 0.5, m2 = (-0.25 * 5 + 0.25 * 4) / 9.0;
        Tensor<double> a({3, 2, 2, 2});
        for (std::size_t n = 0; n < 3; ++n)
            for (std::size_t j = 0; j < 4; ++j) {
                a[(n * 2 + 0) * 4 + j] = m1 + (j % 2 ? 0.1 : -0.1);
                a[(n * 2 + 1) * 4 + j] = m2 + (j < 2 ? 0.3 : -0.3);
            }
        auto r = hebbian_regularizer(g, g.constant(a), g.constant(w));
        expect(std::abs(g.value(r)[0]) < 1e-15, "aligned-mean Hebbian = 0");
    }
    expect(neuromodulator_value(NeuromodulatorState<double>::zeros(), 3.0) == 0.5, "sigma(0) = 0.5");
    {
        auto margin = [&](std::vector<double> ea, std::vector<double> eb, bool same, double m, double* grad_norm) {
            ad::Graph<double> g;
            auto a = g.parameter(Tensor<double>({1, ea.size()}, ea));
            auto b = g.parameter(Tensor<double>({1, eb.size()}, eb));
            const std::vector<std::uint8_t> s{static_cast<std::uint8_t>(same)};
            auto l = pairwise_margin_loss(g, a, b, std::span<const std::uint8_t>(s), m);
            g.backward(l);
            if (grad_norm) {
                *grad_norm = 0;
                for (double v : g.grad(a)) *grad_norm += std::abs(v);
                for (double v : g.grad(b)) *grad_norm += std::abs(v);
            }
            return g.value(l)[0];
        };
        double gn = 0;
        expect(margin({1, 2}, {1, 2}, true, 1.0, nullptr) == 0.0, "same class, equal embeddings -> 0");
        expect(margin({0, 0}, {3, 4}, true, 1.0, nullptr) == 25.0, "same class, distance 5 -> 25");
        expect(margin({1, 2}, {1, 2}, false, 1.0, nullptr) == 1.0, "different class, equal, m=1 -> 1");
        expect(margin({0, 0}, {3, 4}, false, 1.0, &gn) == 0.0 && gn == 0.0, "different class, beyond margin -> 0, zero grad");
        expect(margin({0, 0}, {0.6, 0.8}, false, 2.0, nullptr) == 1.0, "different class, distance 1, m=2 -> 1");
    }
    {
        auto m = build_model<double>(Arch::tiny_vgg, 4, 3, 16, 2);
        ad::Graph<double> g;
        auto p = bind_parameters(g, m);
        auto c = consolidation_penalty(g, p, m);
        expect(g.value(c)[0] == 0.0, "consolidation theta = theta^- -> 0");
    }
    {
        auto m = build_model<double>(Arch::mini_resnet, 4, 3, 16, 2);
        ad::Graph<double> g;
        auto p = bind_parameters(g, m);
        auto nmp = bind_neuromodulator(g, NeuromodulatorState<double>::init(3));
        Tensor<double> x({4, 3, 16, 16});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.37 * double(i));
        auto taps = forward(g, m, p, g.constant(x), {ad::Mode::train, false});
        const std::vector<int> y{0, 1, 2, 3};
        LossConfig off;
        off.lambda_hebb1 = 0;
        auto l1 = phase1_loss(g, taps, std::span<const int>(y), nmp, off);
        auto ce = cross_entropy(g, taps.logits, std::span<const int>(y));
        expect(g.value(l1.total)[0] == g.value(ce)[0], "lambda_hebb1 = 0 -> total == CE");
        auto [ta, tb] = split_taps(g, taps, 2);
        LossConfig zero;
        zero.lambda_metric = zero.lambda_cons = zero.lambda_hebb2 = 0;
        const std::vector<int> ya{0, 1}, yb{2, 3};
        const std::vector<std::uint8_t> same{0, 0};
        auto l2 = phase2_loss(g, ta, tb, std::span<const int>(ya), std::span<const int>(yb),
                              std::span<const std::uint8_t>(same), p, m, nmp, zero);
        expect(std::abs(l2.values.total - (l2.values.ce_a + l2.values.ce_b)) == 0.0, "phase-2 weights off -> CE_A + CE_B");
    }
    std::string d = failed.empty() ? "uniform CE, aligned Hebbian, sigma(0), 5 margin cases, consolidation, gate-off and weights-off reductions"
                                   : "failed:";
    for (const auto& f : failed) d += " [" + f + "]";
    return {failed.empty(), d};
}

// --- 3 ---------------------------------------------------------------------
Outcome baseline_reduction() {
    SyntheticSpec spec;
    spec.train_per_class = 40;
    spec.val_per_class = 10;
    spec.test_per_class = 10;
    const auto s = synthetic_splits(spec);
    TrainConfig cfg;
    cfg.epochs_phase1 = 3;
    cfg.swa_start_epoch = 2;
    cfg.lr_phase1 = 0.01;
    cfg.batch_size = 32;
    cfg.loss.lambda_hebb1 = 0;
    bool ok = true;
    std::size_t epochs = 0;
    for (Arch arch : {Arch::tiny_vgg, Arch::mini_resnet}) {
        auto m = build_model<float>(arch, 4, 3, 16, 11);
        auto nm = NeuromodulatorState<float>::init(12);
        auto a = train_phase1(m, nm, s.train, s.val, cfg, Objective::nm_hebb);
        auto b = train_phase1(m, nm, s.train, s.val, cfg, Objective::plain_ce);
        ok = ok && a.history.size() == b.history.size();
        for (std::size_t e = 0; ok && e < a.history.size(); ++e)
            ok = a.history[e].loss.total == b.history[e].loss.total && a.history[e].loss.ce == b.history[e].loss.ce &&
                 a.history[e].val_top1 == b.history[e].val_top1;
        for (std::size_t i = 0; ok && i < m.params.size(); ++i) ok = a.model.params[i].value == b.model.params[i].value;
        epochs += a.history.size();
    }
    return {ok, std::to_string(epochs) + " epochs over both backbones: loss histories and final parameters bit-identical"};
}

// --- 4 ---------------------------------------------------------------------
Outcome directional() {
    const auto t0 = std::chrono::steady_clock::now();
    double base_top1 = 0, nm_top1 = 0, base_nmi = 0, nm_nmi = 0, p1_ratio = 0, p2_ratio = 0;
    const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    for (auto seed : seeds) {
        SyntheticSpec spec;  // default dataset: K=4, 16x16x3, 500/125/125 per class
        spec.seed = seed;
        const auto s = synthetic_splits(spec);
        TrainConfig cfg;
        cfg.epochs_phase1 = 12;
        cfg.epochs_phase2 = 12;
        cfg.swa_start_epoch = 9;
        cfg.loss.margin = 10.0;
        cfg.seed = seed;
        auto m = build_model<float>(Arch::tiny_vgg, 4, 3, 16, seed);
        auto nm = NeuromodulatorState<float>::init(seed + 1);

        auto bcfg = cfg;
        bcfg.loss.lambda_hebb1 = 0;
        auto base = train_phase1(m, nm, s.train, s.val, bcfg);
        auto eb = evaluate(base.model, s.test, 0, "baseline");
        auto p1 = train_phase1(m, nm, s.train, s.val, cfg);
        auto e1 = evaluate(p1.model, s.test, 0, "phase1");
        auto p2 = train_phase2(p1.model, p1.model, p1.nm, s.train, s.val, cfg);
        auto e2 = evaluate(p2.model, s.test, 0, "phase2");
        std::printf("    seed %llu: baseline top1 %.4f nmi %.4f | phase1 ratio %.4f | phase2 top1 %.4f nmi %.4f ratio %.4f\n",
                    static_cast<unsigned long long>(seed), eb.top1, eb.nmi, e1.clusters.ratio(), e2.top1, e2.nmi,
                    e2.clusters.ratio());
        std::fflush(stdout);
        base_top1 += eb.top1 / 5;
        base_nmi += eb.nmi / 5;
        nm_top1 += e2.top1 / 5;
        nm_nmi += e2.nmi / 5;
        p1_ratio += e1.clusters.ratio() / 5;
        p2_ratio += e2.clusters.ratio() / 5;
    }
    const double sec = seconds_since(t0);
    const bool a = nm_top1 >= base_top1 - 0.005, b = nm_nmi - base_nmi >= 0.02, c = p2_ratio < p1_ratio;
    return {a && b && c && sec < 900.0,
            "5-seed means: top1 " + fmt("%.4f", nm_top1) + " vs baseline " + fmt("%.4f", base_top1) + (a ? " ok" : " FAIL") +
                "; NMI " + fmt("%.4f", nm_nmi) + " vs " + fmt("%.4f", base_nmi) + (b ? " ok" : " FAIL") +
                "; intra/inter " + fmt("%.4f", p2_ratio) + " vs phase-1 " + fmt("%.4f", p1_ratio) + (c ? " ok" : " FAIL") +
                "; " + fmt("%.0f", sec) + " s"};
}

// --- 5 ---------------------------------------------------------------------
Outcome haf_checks() {
    auto h = haf(Tensor<double>({4, 1}, std::vector<double>{1, 0.5, 0.1, 0.9}), 0.8);
    bool ok = h.haf[0] == 0.5;
    std::mt19937_64 rng(5);
    std::gamma_distribution<double> gd(2.0, 1.0);
    for (std::size_t N : {1u, 2u, 7u, 50u}) {
        Tensor<double> r({N, 24});
        for (auto& v : r.values()) v = gd(rng);
        for (double x : haf(r).haf) ok = ok && x >= 1.0 / double(N) && x <= 1.0;
    }
    const RunConfig defaults = parse_config("");
    const bool echo = emit_config(defaults).find("haf_tau = 0.8\n") != std::string::npos;
    return {ok && echo && defaults.analysis.haf_tau == 0.8,
            "fixture HAF " + fmt("%.3f", h.haf[0]) + ", bounds [1/N,1] over 4 set sizes, default tau 0.8 " +
                (echo ? "in" : "MISSING from") + " effective-config echo"};
}

// --- 6 ---------------------------------------------------------------------
Outcome speckle_checks() {
    bool ok = kSpeckleHfThreshold == 0.60 && kSpeckleResultantThreshold == 0.20;
    for (std::size_t k : {3u, 5u, 7u}) {
        std::vector<double> g(k * k);
        for (std::size_t y = 0; y < k; ++y)
            for (std::size_t x = 0; x < k; ++x) g[y * k + x] = std::sin(2 * std::numbers::pi * 0.3 * double(y));
        ok = ok && !analyze_kernel(g, k).speckle;
    }
    for (std::size_t k : {5u, 7u, 9u}) {
        std::vector<double> g(k * k);
        const double c = double(k - 1) / 2, s = double(k) / 2;
        for (std::size_t y = 0; y < k; ++y)
            for (std::size_t x = 0; x < k; ++x)
                g[y * k + x] = std::exp(-((double(x) - c) * (double(x) - c) + (double(y) - c) * (double(y) - c)) / (2 * s * s));
        ok = ok && !analyze_kernel(g, k).speckle;
    }
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> n(0, 1);
    Tensor<double> kernels({1000, 1, 3, 3});
    for (auto& v : kernels.values()) v = n(rng);
    const double rate = speckle_report(kernels).speckle_rate;
    ok = ok && rate > 50.0 && rate == 72.0;
    return {ok, "gratings and broad Gaussians not speckle; white noise " + fmt("%.1f", rate) +
                    "% speckle (fixture 72.0%); thresholds 0.60 / 0.20"};
}

// --- 7 ---------------------------------------------------------------------
Outcome metric_checks() {
    const std::vector<int> a{0, 0, 1, 1}, b{1, 1, 0, 0}, c{0, 1, 0, 1};
    bool ok = nmi_partitions(a, b) == 1.0 && nmi_partitions(a, c) == 0.0;
    std::mt19937_64 rng(21);
    std::normal_distribution<double> nd(0, 1);
    Tensor<double> x({150, 5});
    std::vector<int> y;
    for (std::size_t i = 0; i < 150; ++i) {
        y.push_back(static_cast<int>(i / 50));
        for (std::size_t j = 0; j < 5; ++j) x[i * 5 + j] = nd(rng) + (j == i / 50 ? 10.0 : 0.0);
    }
    const EmbeddingSet e{x, y, "blobs"};
    const double v = nmi(e, 3, 0);
    const auto k1 = kmeans(x, 3, 99), k2 = kmeans(x, 3, 99);
    ok = ok && v > 0.95 && k1.assignment == k2.assignment && k1.inertia == k2.inertia && nmi(e, 3, 5) == nmi(e, 3, 5);
    return {ok, "permutation -> 1, independent -> 0, 3 blobs at 10 sigma NMI " + fmt("%.4f", v) +
                    ", k-means restarts deterministic"};
}

// --- 8 ---------------------------------------------------------------------
int run(const std::string& cmd) { return std::system((cmd + " > /dev/null 2>&1").c_str()); }

double csv_field(const std::string& csv, std::size_t row, const std::string& column) {
    std::istringstream in(csv);
    std::string header, line;
    std::getline(in, header);
    for (std::size_t r = 0; r <= row; ++r) std::getline(in, line);
    std::vector<std::string> h, v;
    std::stringstream hs(header), ls(line);
    for (std::string t; std::getline(hs, t, ',');) h.push_back(t);
    for (std::string t; std::getline(ls, t, ',');) v.push_back(t);
    for (std::size_t i = 0; i < h.size() && i < v.size(); ++i)
        if (h[i] == column) return std::stod(v[i]);
    return std::nan("");
}

std::vector<std::string> phase_rows(const std::string& report, char phase) {
    std::vector<std::string> rows;
    std::istringstream in(report);
    for (std::string l; std::getline(in, l);) {
        const auto c = l.find(',');
        if (c != std::string::npos && l.size() > c + 1 && l[c + 1] == phase && l[c + 2] == ',') rows.push_back(l);
    }
    return rows;
}

Outcome persistence(const std::string& tool, const fs::path& work) {
    fs::remove_all(work);
    fs::create_directories(work);
    const auto cfg = work / "run.ini";
    spit(cfg,
         "[data]\ntrain_per_class = 40\nval_per_class = 10\ntest_per_class = 20\n"
         "[train]\nepochs_phase1 = 3\nepochs_phase2 = 2\nswa_start_epoch = 2\nbatch_size = 32\nlr_phase1 = 0.01\n"
         "[model]\narch = mini_resnet\n");
    const auto r1 = work / "r1", r2 = work / "r2", r3 = work / "r3";
    std::vector<std::string> bad;
    if (run(tool + " train --phase both --config " + cfg.string() + " --out " + r1.string()) != 0) bad.push_back("run 1 failed");
    if (run(tool + " train --phase both --config " + cfg.string() + " --out " + r2.string()) != 0) bad.push_back("run 2 failed");
    if (!bad.empty()) return {false, bad.front()};
    const std::string rep1 = slurp(r1 / "report.csv"), rep2 = slurp(r2 / "report.csv");
    if (rep1 != rep2 || rep1.empty()) bad.push_back("RunReport CSVs differ");
    if (slurp(r1 / "phase2.ckpt") != slurp(r2 / "phase2.ckpt")) bad.push_back("checkpoints of the two runs differ");

    // save -> load -> save, byte for byte; tensors bit-identical
    const auto bytes = slurp(r1 / "phase1.ckpt");
    const auto ck = load_checkpoint((r1 / "phase1.ckpt").string());
    save_checkpoint((work / "resaved.ckpt").string(), ck);
    if (slurp(work / "resaved.ckpt") != bytes) bad.push_back("save/load/save not byte-identical");
    const auto ck2 = load_checkpoint((work / "resaved.ckpt").string());
    for (std::size_t i = 0; i < ck.tensors.size(); ++i)
        if (ck.tensors[i].values != ck2.tensors[i].values) bad.push_back("tensor " + ck.tensors[i].name + " changed");

    // eval reproduces the reported numbers
    const std::string summary = slurp(r1 / "summary.csv");
    double worst = 0;
    for (std::size_t row = 0; row < 2; ++row) {
        const std::string stage = row == 0 ? "phase1" : "phase2";
        const auto out = work / ("eval_" + stage + ".csv");
        if (run(tool + " eval --checkpoint " + (r1 / (stage + ".ckpt")).string() + " --out " + out.string()) != 0) {
            bad.push_back("eval " + stage + " failed");
            continue;
        }
        const std::string ev = slurp(out);
        worst = std::max({worst, std::abs(csv_field(ev, 0, "top1") - csv_field(summary, row, "test_top1")),
                          std::abs(csv_field(ev, 0, "nmi") - csv_field(summary, row, "nmi"))});
    }
    if (!(worst <= 1e-6)) bad.push_back("eval differs from report by " + fmt("%.3g", worst));

    // phase 2 resumed from the persisted phase-1 checkpoint matches the in-process run
    if (run(tool + " train --phase 2 --config " + cfg.string() + " --checkpoint " + (r1 / "phase1.ckpt").string() +
            " --out " + r3.string()) != 0)
        bad.push_back("phase-2 resume failed");
    else if (phase_rows(slurp(r3 / "report.csv"), '2') != phase_rows(rep1, '2') || phase_rows(rep1, '2').empty())
        bad.push_back("phase 2 from disk differs from in-process phase 2");

    std::string d = bad.empty() ? "identical RunReports and checkpoints over two runs, byte-identical re-save, eval within " +
                                      fmt("%.1g", worst) + ", phase 2 from disk == in-process"
                                : "failed:";
    for (const auto& b : bad) d += " [" + b + "]";
    return {bad.empty(), d};
}

// --- 9 ---------------------------------------------------------------------
Outcome formats(const fs::path& work) {
    fs::create_directories(work);
    std::vector<std::string> bad;
    auto be32 = [](std::string& s, std::uint32_t v) {
        for (int k = 24; k >= 0; k -= 8) s.push_back(static_cast<char>((v >> k) & 0xFF));
    };
    std::string img, lab;
    be32(img, 0x00000803);
    be32(img, 1);
    be32(img, 28);
    be32(img, 28);
    for (int i = 0; i < 784; ++i) img.push_back(static_cast<char>((i * 31) % 256));
    be32(lab, 0x00000801);
    be32(lab, 1);
    lab.push_back(6);
    spit(work / "img.idx", img);
    spit(work / "lab.idx", lab);
    auto ds = load_idx((work / "img.idx").string(), (work / "lab.idx").string(), 10);
    bool idx_ok = ds.images.shape() == Shape{1, 1, 28, 28} && ds.labels == std::vector<int>{6};
    for (int i = 0; i < 784; ++i) idx_ok = idx_ok && ds.images[i] == static_cast<float>((i * 31) % 256) / 255.0f;
    if (!idx_ok) bad.push_back("IDX fixture tensor");

    std::string c10(3073, '\0'), c100(3074, '\0');
    c10[0] = 3;
    c100[0] = 1;
    c100[1] = 77;
    for (int j = 0; j < 3072; ++j) c10[1 + j] = c100[2 + j] = static_cast<char>((j * 7 + j / 1024) % 256);
    spit(work / "c10.bin", c10);
    spit(work / "c100.bin", c100);
    auto d10 = load_cifar_binary({(work / "c10.bin").string()}, CifarVariant::cifar10);
    auto d100 = load_cifar_binary({(work / "c100.bin").string()}, CifarVariant::cifar100);
    bool cifar_ok = d10.labels == std::vector<int>{3} && d100.labels == std::vector<int>{77} &&
                    d10.images.shape() == Shape{1, 3, 32, 32};
    for (int j = 0; j < 3072; ++j) {
        const float want = static_cast<float>((j * 7 + j / 1024) % 256) / 255.0f;
        cifar_ok = cifar_ok && d10.images[j] == want && d100.images[j] == want;
    }
    if (!cifar_ok) bad.push_back("CIFAR fixture tensors");

    auto throws = [](auto&& f) {
        try {
            f();
        } catch (const DataError&) {
            return true;
        } catch (...) {
            return false;
        }
        return false;
    };
    spit(work / "img_trunc.idx", img.substr(0, img.size() - 3));
    std::string badmagic = img;
    badmagic[2] = 0x0B;
    spit(work / "img_magic.idx", badmagic);
    std::string lab2 = lab;
    lab2[7] = 2;
    lab2.push_back(1);
    spit(work / "lab_count.idx", lab2);
    spit(work / "c10_trunc.bin", c10.substr(0, 3000));
    const bool errs =
        throws([&] { load_idx((work / "img_trunc.idx").string(), (work / "lab.idx").string()); }) &&
        throws([&] { load_idx((work / "img_magic.idx").string(), (work / "lab.idx").string()); }) &&
        throws([&] { load_idx((work / "img.idx").string(), (work / "lab_count.idx").string()); }) &&
        throws([&] { load_cifar_binary({(work / "c10_trunc.bin").string()}, CifarVariant::cifar10); }) &&
        throws([&] { load_cifar_binary({(work / "c10.bin").string()}, CifarVariant::cifar100); });
    if (!errs) bad.push_back("a corrupt fixture did not raise DataError");
    std::string d = bad.empty() ? "IDX 1x28x28, CIFAR-10 and CIFAR-100 single records exact; truncated, bad magic, count "
                                  "mismatch and wrong record size raise DataError"
                                : "failed:";
    for (const auto& b : bad) d += " [" + b + "]";
    return {bad.empty(), d};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::fprintf(stderr, "usage: acceptance <nmhebb tool> <scratch dir> [--only 1,2,...]\n");
        return 2;
    }
    const std::string tool = argv[1];
    const fs::path work = argv[2];
    std::set<int> only;
    if (argc >= 5 && std::string(argv[3]) == "--only") {
        std::stringstream ss(argv[4]);
        for (std::string t; std::getline(ss, t, ',');) only.insert(std::stoi(t));
    }
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient fidelity", gradient_fidelity},
        {"loss-term oracles", loss_oracles},
        {"baseline reduction", baseline_reduction},
        {"directional method check", directional},
        {"HAF correctness", haf_checks},
        {"speckle classifier oracles", speckle_checks},
        {"metric-suite oracles", metric_checks},
        {"persistence and determinism", [&] { return persistence(tool, work / "persistence"); }},
        {"format conformance", [&] { return formats(work / "formats"); }},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("criterion %d (%s): %s: %s\n", id, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
