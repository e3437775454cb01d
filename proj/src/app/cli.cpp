#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "nmhebb/fidelity.hpp"
#include "nmhebb/harness.hpp"

namespace nmhebb {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write '" + p.string() + "'");
    out << text;
}

struct StageSummary {
    std::string stage;
    double test_top1 = 0, nmi = 0, intra = 0, inter = 0, ratio = 0, speckle_rate = 0, mean_haf = 0;
};

std::string summary_header() { return "stage,test_top1,nmi,intra,inter,ratio,speckle_rate,mean_haf\n"; }

std::string summary_row(const StageSummary& s) {
    std::string r = s.stage;
    for (double v : {s.test_top1, s.nmi, s.intra, s.inter, s.ratio, s.speckle_rate, s.mean_haf}) r += "," + format_number(v);
    return r + "\n";
}

json summary_json(const StageSummary& s) {
    return {{"stage", s.stage}, {"test_top1", s.test_top1}, {"nmi", s.nmi}, {"intra", s.intra}, {"inter", s.inter},
            {"ratio", s.ratio}, {"speckle_rate", s.speckle_rate}, {"mean_haf", s.mean_haf}};
}

template <typename T>
FilterReport analyze_filters(ModelState<T>& m, const Dataset& ref, double tau) {
    std::vector<std::size_t> all(ref.size());
    std::iota(all.begin(), all.end(), 0);
    auto x = prepare_batch<T>(ref, all, nullptr, TrainConfig{});
    const auto h = haf(spatial_max(hebbian_activations(m, x)), tau);
    return speckle_report(m.params[m.param_index(m.hebbian_layer + ".w")].value, &h);
}

template <typename T>
StageSummary summarize(const std::string& stage, ModelState<T>& m, const Splits& s, const RunConfig& rc,
                       FilterReport* filters_out = nullptr) {
    auto e = evaluate(m, s.test, rc.analysis.kmeans_seed, stage);
    auto f = analyze_filters(m, s.test, rc.analysis.haf_tau);
    if (filters_out) *filters_out = f;
    return {stage, e.top1, e.nmi, e.clusters.intra, e.clusters.inter, e.clusters.ratio(), f.speckle_rate, f.mean_haf};
}

std::string phase_rng_state(std::uint64_t seed) {
    std::seed_seq seq{seed, std::uint64_t{2}};
    std::mt19937_64 rng(seq);
    std::ostringstream ss;
    ss << rng;
    return ss.str();
}

enum class TrainMode { phase1, phase2, both, baseline };

struct TrainArgs {
    TrainMode mode = TrainMode::both;
    std::string out = "run";
    std::string checkpoint;  // phase 2 starting point
    bool quiet = false;
};

template <typename T>
std::vector<StageSummary> run_training(RunConfig rc, const TrainArgs& a) {
    if (a.mode == TrainMode::baseline) rc.train.loss.lambda_hebb1 = 0.0;
    const std::string cfg_text = emit_config(rc);
    fs::create_directories(a.out);
    write_text(fs::path(a.out) / "config.ini", cfg_text);
    const Splits s = load_data(rc.data);

    std::string report = run_report_header();
    auto t0 = std::chrono::steady_clock::now();
    auto on_epoch = [&](const EpochRecord& r) {
        report += run_report_row(r);
        if (!a.quiet) {
            const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::fprintf(stderr, "phase %d epoch %zu  loss %.4f  ce %.4f  val_top1 %.4f  lr %.3g  [%.0fs]\n", r.phase,
                         r.epoch, r.loss.total, r.loss.ce, r.val_top1, r.lr, sec);
        }
    };

    std::vector<StageSummary> stages;
    json record;
    record["config"] = cfg_text;
    record["stages"] = json::array();
    auto finish_stage = [&](const std::string& tag, ModelState<T>& m, const NeuromodulatorState<T>& nm,
                            const PhaseResult<T>& r) {
        auto ck = make_checkpoint(m, nm, tag, cfg_text);
        ck.rng_state = phase_rng_state(rc.train.seed);
        ck.meta["handoff"] = r.handoff;
        ck.meta["best_epoch"] = std::to_string(r.best_epoch);
        ck.meta["best_val_top1"] = format_number(r.best_val_top1);
        ck.meta["early_stopped"] = r.early_stopped ? "true" : "false";
        save_checkpoint((fs::path(a.out) / (tag + ".ckpt")).string(), ck);
        FilterReport f;
        auto st = summarize(tag, m, s, rc, &f);
        write_text(fs::path(a.out) / ("filters_" + tag + ".csv"), filter_report_csv(f));
        stages.push_back(st);
        auto j = summary_json(st);
        j["handoff"] = r.handoff;
        j["best_epoch"] = r.best_epoch;
        j["best_val_top1"] = r.best_val_top1;
        record["stages"].push_back(j);
    };

    ModelState<T> model;
    NeuromodulatorState<T> nm;
    if (a.mode != TrainMode::phase2) {
        model = build_model<T>(rc.arch, s.train.num_classes, s.train.channels(), s.train.image_size(), rc.train.seed);
        nm = NeuromodulatorState<T>::init(rc.train.seed + 1);
        auto p1 = train_phase1(model, nm, s.train, s.val, rc.train, Objective::nm_hebb, on_epoch);
        model = p1.model;
        nm = p1.nm;
        finish_stage(a.mode == TrainMode::baseline ? "baseline" : "phase1", model, nm, p1);
    } else {
        if (a.checkpoint.empty()) throw ConfigError("train --phase 2 needs --checkpoint (a phase-1 checkpoint)");
        const auto ck = load_checkpoint(a.checkpoint);
        model = model_from_checkpoint<T>(ck);
        nm = nm_from_checkpoint<T>(ck);
        if (model.num_classes != s.train.num_classes || model.input_size != s.train.image_size() ||
            model.input_channels != s.train.channels())
            throw CheckpointError("checkpoint model does not match the configured dataset");
    }
    if (a.mode == TrainMode::phase2 || a.mode == TrainMode::both) {
        const ModelState<T> frozen = model;
        auto p2 = train_phase2(model, frozen, nm, s.train, s.val, rc.train, on_epoch);
        finish_stage("phase2", p2.model, p2.nm, p2);
    }

    std::string summary = summary_header();
    for (const auto& st : stages) summary += summary_row(st);
    write_text(fs::path(a.out) / "report.csv", report);
    write_text(fs::path(a.out) / "summary.csv", summary);
    write_text(fs::path(a.out) / "summary.json", record.dump(2) + "\n");
    return stages;
}

std::vector<StageSummary> dispatch_training(const RunConfig& rc, const TrainArgs& a) {
    return rc.train.precision == Precision::f32 ? run_training<float>(rc, a) : run_training<double>(rc, a);
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoull(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ConfigError("--seeds: '" + item + "' is not an integer");
        }
    }
    if (out.empty()) throw ConfigError("--seeds: empty list");
    return out;
}

void run_sweep(const RunConfig& base, TrainArgs a, const std::string& seeds) {
    const auto list = parse_seeds(seeds);
    std::map<std::string, std::vector<StageSummary>> by_stage;
    std::vector<std::string> order;
    const std::string root = a.out;
    for (auto seed : list) {
        RunConfig rc = base;
        rc.train.seed = seed;
        a.out = (fs::path(root) / ("seed_" + std::to_string(seed))).string();
        for (const auto& st : dispatch_training(rc, a)) {
            if (!by_stage.count(st.stage)) order.push_back(st.stage);
            by_stage[st.stage].push_back(st);
        }
    }
    std::string csv = "stage,statistic,test_top1,nmi,intra,inter,ratio,speckle_rate,mean_haf\n";
    for (const auto& stage : order) {
        const auto& v = by_stage[stage];
        auto col = [&](auto get) {
            double m = 0, q = 0;
            for (const auto& x : v) m += get(x);
            m /= static_cast<double>(v.size());
            for (const auto& x : v) q += (get(x) - m) * (get(x) - m);
            return std::pair{m, v.size() > 1 ? std::sqrt(q / static_cast<double>(v.size() - 1)) : 0.0};
        };
        std::vector<std::pair<double, double>> cols = {
            col([](const StageSummary& x) { return x.test_top1; }), col([](const StageSummary& x) { return x.nmi; }),
            col([](const StageSummary& x) { return x.intra; }),     col([](const StageSummary& x) { return x.inter; }),
            col([](const StageSummary& x) { return x.ratio; }),     col([](const StageSummary& x) { return x.speckle_rate; }),
            col([](const StageSummary& x) { return x.mean_haf; })};
        std::string mean = stage + ",mean", sd = stage + ",std";
        for (const auto& [m, d] : cols) {
            mean += "," + format_number(m);
            sd += "," + format_number(d);
        }
        csv += mean + "\n" + sd + "\n";
    }
    write_text(fs::path(root) / "sweep.csv", csv);
    std::cout << csv;
}

// Model + data for the read-only commands.
struct Loaded {
    Checkpoint ck;
    RunConfig rc;
    Splits splits;
};

Loaded load_for_analysis(const std::string& ckpt, const std::string& data_config) {
    Loaded l;
    l.ck = load_checkpoint(ckpt);
    l.rc = data_config.empty() ? parse_config(l.ck.config, ckpt + " (embedded config)") : load_config(data_config);
    l.splits = load_data(l.rc.data);
    return l;
}

const Dataset& pick_split(const Splits& s, const std::string& name) {
    if (name == "test") return s.test;
    if (name == "val") return s.val;
    if (name == "train") return s.train;
    throw ConfigError("unknown split '" + name + "' (train, val, test)");
}

template <typename T>
void eval_command(const Loaded& l, const std::string& split, const std::string& out) {
    auto m = model_from_checkpoint<T>(l.ck);
    const auto& ds = pick_split(l.splits, split);
    auto e = evaluate(m, ds, l.rc.analysis.kmeans_seed, l.ck.phase);
    std::string csv = "stage,split,top1,nmi,intra,inter,ratio\n" + l.ck.phase + "," + split + "," + format_number(e.top1) +
                      "," + format_number(e.nmi) + "," + format_number(e.clusters.intra) + "," +
                      format_number(e.clusters.inter) + "," + format_number(e.clusters.ratio()) + "\n";
    if (!out.empty()) write_text(out, csv);
    std::cout << csv;
}

template <typename T>
void filters_command(const Loaded& l, const std::string& split, const std::string& out) {
    auto m = model_from_checkpoint<T>(l.ck);
    auto f = analyze_filters(m, pick_split(l.splits, split), l.rc.analysis.haf_tau);
    const auto csv = filter_report_csv(f);
    if (!out.empty()) write_text(out, csv);
    else std::cout << csv;
    std::fprintf(stderr, "speckle_rate %s  mean_haf %s  (tau %s, %zu filters)\n", format_number(f.speckle_rate).c_str(),
                 format_number(f.mean_haf).c_str(), format_number(l.rc.analysis.haf_tau).c_str(), f.records.size());
}

template <typename T>
void export_command(const Loaded& l, const std::string& split, const std::string& out) {
    auto m = model_from_checkpoint<T>(l.ck);
    const auto& ds = pick_split(l.splits, split);
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    auto inf = infer(m, prepare_batch<T>(ds, all, nullptr, TrainConfig{}));
    auto e = make_embeddings(inf.embeddings, ds.labels, l.ck.phase);
    auto p = pca2d(e.matrix);
    const std::size_t D = e.dim();
    std::string csv = "label";
    for (std::size_t j = 0; j < D; ++j) csv += ",e" + std::to_string(j);
    csv += ",pc1,pc2\n";
    for (std::size_t i = 0; i < e.size(); ++i) {
        csv += std::to_string(e.labels[i]);
        for (std::size_t j = 0; j < D; ++j) csv += "," + format_number(e.matrix[i * D + j]);
        csv += "," + format_number(p.projection[i * 2]) + "," + format_number(p.projection[i * 2 + 1]) + "\n";
    }
    write_text(out, csv);
}

int gradcheck_command(const FidelityOptions& opt) {
    bool ok = true;
    std::printf("arch,objective,elements,max_rel_error,one_sided,unresolved,worst_param,seconds,passed\n");
    for (const auto& c : run_gradient_fidelity(opt)) {
        std::printf("%s,%s,%zu,%.3e,%zu,%zu,%s,%.1f,%s\n", arch_name(c.arch).c_str(), c.objective.c_str(), c.result.checked,
                    c.result.max_rel_error, c.result.one_sided, c.result.unresolved, c.worst_name.c_str(), c.seconds,
                    c.passed ? "yes" : "no");
        ok = ok && c.passed;
    }
    std::printf("%s (tolerance %.0e)\n", ok ? "PASS" : "FAIL", opt.tolerance);
    return ok ? 0 : 1;
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"nmhebb: two-phase Hebbian/metric training on toy CNNs"};
    app.require_subcommand(1);

    TrainArgs targs;
    std::string config_path, phase = "both", seeds;
    auto* train = app.add_subcommand("train", "train phase 1, phase 2, or both");
    train->add_option("--config", config_path, "config file (empty file = defaults)")->required();
    train->add_option("--phase", phase, "1, 2 or both")->check(CLI::IsMember({"1", "2", "both"}));
    train->add_option("--out", targs.out, "output directory");
    train->add_option("--checkpoint", targs.checkpoint, "phase-1 checkpoint (for --phase 2)");
    train->add_option("--seeds", seeds, "comma-separated seed sweep");
    train->add_flag("--quiet", targs.quiet);

    std::string b_config, b_out = "run", b_seeds;
    bool b_quiet = false;
    auto* base = app.add_subcommand("baseline", "phase 1 with the Hebbian term off, no phase 2");
    base->add_option("--config", b_config)->required();
    base->add_option("--out", b_out);
    base->add_option("--seeds", b_seeds);
    base->add_flag("--quiet", b_quiet);

    std::string ckpt, data, split = "test", out;
    auto* eval = app.add_subcommand("eval", "Top-1, NMI and class distances of a checkpoint");
    eval->add_option("--checkpoint", ckpt)->required();
    eval->add_option("--data", data, "config file whose [data] section selects the dataset (default: the checkpoint's)");
    eval->add_option("--split", split);
    eval->add_option("--out", out);

    auto* filters = app.add_subcommand("analyze-filters", "HAF and speckle report of the Hebbian layer");
    filters->add_option("--checkpoint", ckpt)->required();
    filters->add_option("--data", data);
    filters->add_option("--split", split);
    filters->add_option("--out", out);

    auto* exp = app.add_subcommand("export-embeddings", "labels, embeddings and PCA coordinates as CSV");
    exp->add_option("--checkpoint", ckpt)->required();
    exp->add_option("--out", out)->required();
    exp->add_option("--data", data);
    exp->add_option("--split", split);

    FidelityOptions fopt;
    auto* gc = app.add_subcommand("gradcheck", "finite-difference check of both objectives on both backbones");
    gc->add_option("--seed", fopt.seed);
    gc->add_option("--eps", fopt.eps);
    gc->add_option("--tolerance", fopt.tolerance);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (train->parsed()) {
            targs.mode = phase == "1" ? TrainMode::phase1 : phase == "2" ? TrainMode::phase2 : TrainMode::both;
            const auto rc = load_config(config_path);
            if (!seeds.empty()) run_sweep(rc, targs, seeds);
            else dispatch_training(rc, targs);
        } else if (base->parsed()) {
            TrainArgs a;
            a.mode = TrainMode::baseline;
            a.out = b_out;
            a.quiet = b_quiet;
            const auto rc = load_config(b_config);
            if (!b_seeds.empty()) run_sweep(rc, a, b_seeds);
            else dispatch_training(rc, a);
        } else if (eval->parsed()) {
            auto l = load_for_analysis(ckpt, data);
            l.ck.precision == Precision::f32 ? eval_command<float>(l, split, out) : eval_command<double>(l, split, out);
        } else if (filters->parsed()) {
            auto l = load_for_analysis(ckpt, data);
            l.ck.precision == Precision::f32 ? filters_command<float>(l, split, out) : filters_command<double>(l, split, out);
        } else if (exp->parsed()) {
            auto l = load_for_analysis(ckpt, data);
            l.ck.precision == Precision::f32 ? export_command<float>(l, split, out) : export_command<double>(l, split, out);
        } else if (gc->parsed()) {
            return gradcheck_command(fopt);
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "numeric divergence: %s\n", e.what());
        return 4;
    } catch (const CheckpointError& e) {
        std::fprintf(stderr, "checkpoint error: %s\n", e.what());
        return 5;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}

}  // namespace nmhebb
