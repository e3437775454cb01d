#include "nmhebb/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace nmhebb {
namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
}

std::mt19937_64 phase_rng(std::uint64_t seed, std::uint64_t phase) {
    std::seed_seq seq{seed, phase};
    return std::mt19937_64(seq);
}

template <typename T>
void init_velocity(OptimizerState<T>& opt, const ModelState<T>& model, const NeuromodulatorState<T>& nm) {
    opt.velocity.clear();
    for (const auto& p : model.params) opt.velocity.emplace_back(p.value.size(), T(0));
    for (const auto& p : nm.params) opt.velocity.emplace_back(p.value.size(), T(0));
}

template <typename T>
void apply_updates(ad::Graph<T>& g, std::vector<NamedTensor<T>>& params, const std::vector<ad::Var>& vars,
                   OptimizerState<T>& opt, std::size_t offset, const TrainConfig& cfg) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto grad = g.grad(vars[i]);
        const double wd = decays(params[i].name) ? cfg.weight_decay : 0.0;
        sgd_nesterov_step<T>(params[i].value.values(), grad, opt.velocity[offset + i], opt.lr, cfg.momentum, wd);
    }
}

void accumulate(LossValues& acc, const LossValues& v) {
    acc.total += v.total;
    acc.ce += v.ce;
    acc.ce_a += v.ce_a;
    acc.ce_b += v.ce_b;
    acc.hebbian += v.hebbian;
    acc.nu += v.nu;
    acc.metric += v.metric;
    acc.consolidation += v.consolidation;
    acc.hebb_term += v.hebb_term;
    acc.metric_term += v.metric_term;
    acc.cons_term += v.cons_term;
}

LossValues averaged(LossValues acc, std::size_t n) {
    const double k = n ? 1.0 / static_cast<double>(n) : 0.0;
    for (double* f : {&acc.total, &acc.ce, &acc.ce_a, &acc.ce_b, &acc.hebbian, &acc.nu, &acc.metric, &acc.consolidation,
                      &acc.hebb_term, &acc.metric_term, &acc.cons_term})
        *f *= k;
    return acc;
}

void check_loss(double total, int phase, std::size_t epoch, std::size_t step) {
    if (!std::isfinite(total))
        throw DivergenceError("phase " + std::to_string(phase) + ", epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step) + ": loss is not finite (" + std::to_string(total) + ")");
}

void require_stats(const Dataset& ds) {
    if (ds.mean.size() != ds.channels() || ds.stddev.size() != ds.channels())
        throw DataError(ds.split + ": normalization statistics missing");
}

// Batches of a permutation; a trailing batch of one image is dropped (batch
// norm needs two).
std::vector<std::span<const std::size_t>> batches(const std::vector<std::size_t>& order, std::size_t bs) {
    std::vector<std::span<const std::size_t>> out;
    for (std::size_t s = 0; s < order.size(); s += bs) {
        const std::size_t n = std::min(bs, order.size() - s);
        if (n >= 2) out.emplace_back(order.data() + s, n);
    }
    return out;
}

template <typename T>
LossValues phase1_step(ModelState<T>& model, NeuromodulatorState<T>& nm, OptimizerState<T>& opt, const Tensor<T>& x,
                       std::span<const int> labels, const TrainConfig& cfg, Objective objective) {
    ad::Graph<T> g;
    auto p = bind_parameters(g, model);
    std::vector<ad::Var> nmp;
    if (objective == Objective::nm_hebb) nmp = bind_neuromodulator(g, nm);
    auto taps = forward(g, model, p, g.constant(x), {ad::Mode::train, true});
    LossValues v;
    ad::Var total;
    if (objective == Objective::plain_ce) {
        total = cross_entropy(g, taps.logits, labels);
        v.total = v.ce = static_cast<double>(g.value(total)[0]);
    } else {
        auto lb = phase1_loss(g, taps, labels, nmp, cfg.loss);
        total = lb.total;
        v = lb.values;
    }
    check_loss(v.total, 1, 0, opt.step);
    g.backward(total);
    apply_updates(g, model.params, p, opt, 0, cfg);
    if (objective == Objective::nm_hebb) apply_updates(g, nm.params, nmp, opt, model.params.size(), cfg);
    ++opt.step;
    return v;
}

template <typename T>
LossValues phase2_step(ModelState<T>& model, const ModelState<T>& frozen, NeuromodulatorState<T>& nm,
                       OptimizerState<T>& opt, const Tensor<T>& x, const PairBatch& pb, const TrainConfig& cfg) {
    ad::Graph<T> g;
    auto p = bind_parameters(g, model);
    auto nmp = bind_neuromodulator(g, nm);
    auto taps = forward(g, model, p, g.constant(x), {ad::Mode::train, true});
    auto [ta, tb] = split_taps(g, taps, pb.size());
    auto lb = phase2_loss(g, ta, tb, std::span<const int>(pb.labels_a), std::span<const int>(pb.labels_b),
                          std::span<const std::uint8_t>(pb.same_class), p, frozen, nmp, cfg.loss);
    check_loss(lb.values.total, 2, 0, opt.step);
    g.backward(lb.total);
    apply_updates(g, model.params, p, opt, 0, cfg);
    apply_updates(g, nm.params, nmp, opt, model.params.size(), cfg);
    ++opt.step;
    return lb.values;
}

template <typename T>
void load_average(std::vector<NamedTensor<T>>& params, const SwaState<T>& swa) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].value = swa.mean[i];
}

// The weight average against the current pick; the average must validate
// strictly higher to be taken.
template <typename T>
void consider_average(PhaseResult<T>& r, const ModelState<T>& shape_src, const SwaState<T>& swa_theta,
                      const SwaState<T>& swa_phi, const NeuromodulatorState<T>& nm_src, const Dataset& train,
                      const Dataset& val, const TrainConfig& cfg) {
    if (swa_theta.count == 0) return;
    ModelState<T> avg = shape_src;
    load_average(avg.params, swa_theta);
    NeuromodulatorState<T> avg_nm = nm_src;
    load_average(avg_nm.params, swa_phi);
    recompute_bn_statistics(avg, train, cfg.batch_size);
    const double v = validation_top1(avg, val);
    if (v > r.best_val_top1) {
        r.model = std::move(avg);
        r.nm = std::move(avg_nm);
        r.best_val_top1 = v;
        r.handoff = "swa";
    }
}

}  // namespace

std::string precision_name(Precision p) { return p == Precision::f32 ? "float32" : "float64"; }

Precision parse_precision(const std::string& s) {
    if (s == "float32" || s == "f32" || s == "float") return Precision::f32;
    if (s == "float64" || s == "f64" || s == "double") return Precision::f64;
    throw ConfigError("unknown precision '" + s + "' (float32 or float64)");
}

void TrainConfig::validate() const {
    require(epochs_phase1 >= 1, "epochs_phase1 must be >= 1");
    require(epochs_phase2 >= 1, "epochs_phase2 must be >= 1");
    require(lr_phase1 > 0 && std::isfinite(lr_phase1), "lr_phase1 must be > 0");
    require(lr_phase2 > 0 && std::isfinite(lr_phase2), "lr_phase2 must be > 0");
    require(momentum >= 0 && momentum < 1, "momentum must be in [0,1)");
    require(weight_decay >= 0 && std::isfinite(weight_decay), "weight_decay must be >= 0");
    require(batch_size >= 2, "batch_size must be >= 2");
    require(swa_start_epoch >= 1, "swa_start_epoch must be >= 1");
    require(swa_start_epoch <= epochs_phase1, "swa_start_epoch must be <= epochs_phase1");
    require(!swa_phase2 || swa_start_epoch <= epochs_phase2, "swa_start_epoch must be <= epochs_phase2 when swa_phase2 is on");
    require(patience >= 1, "patience must be >= 1");
    require(loss.lambda_hebb1 >= 0, "lambda_hebb1 must be >= 0");
    require(loss.lambda_hebb2 >= 0, "lambda_hebb2 must be >= 0");
    require(loss.lambda_metric >= 0, "lambda_metric must be >= 0");
    require(loss.lambda_cons >= 0, "lambda_cons must be >= 0");
    require(loss.margin > 0, "margin must be > 0");
}

template <typename T>
void sgd_nesterov_step(std::span<T> param, std::span<const T> grad, std::span<T> velocity, double lr, double momentum,
                       double weight_decay) {
    if (param.size() != grad.size() || param.size() != velocity.size())
        throw ShapeError("sgd: parameter, gradient and velocity sizes differ (" + std::to_string(param.size()) + ", " +
                         std::to_string(grad.size()) + ", " + std::to_string(velocity.size()) + ")");
    const T l = static_cast<T>(lr), mu = static_cast<T>(momentum), wd = static_cast<T>(weight_decay);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const T gi = grad[i] + wd * param[i];
        velocity[i] = mu * velocity[i] + gi;
        param[i] -= l * (gi + mu * velocity[i]);
    }
}

double cosine_lr(std::size_t epoch, std::size_t total, double lr0) {
    if (total == 0) throw ConfigError("cosine_lr: total epochs must be > 0");
    const double t = std::min(1.0, static_cast<double>(epoch) / static_cast<double>(total));
    return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

bool decays(const std::string& name) {
    auto ends = [&](const std::string& suf) {
        return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
    };
    return !(ends(".b") || ends(".gamma") || ends(".beta") || ends(".b1") || ends(".b2"));
}

template <typename T>
void SwaState<T>::update(std::span<const NamedTensor<T>> params) {
    if (count == 0) {
        mean.clear();
        for (const auto& p : params) mean.push_back(p.value);
        count = 1;
        return;
    }
    if (params.size() != mean.size()) throw ShapeError("swa: parameter count changed");
    ++count;
    const T inv = T(1) / static_cast<T>(count);
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].value.shape() != mean[i].shape()) throw ShapeError("swa: shape of '" + params[i].name + "' changed");
        for (std::size_t j = 0; j < mean[i].size(); ++j) mean[i][j] += (params[i].value[j] - mean[i][j]) * inv;
    }
}

PairSampler::PairSampler(const Dataset& ds) {
    if (ds.num_classes < 2) throw DataError(ds.split + ": pair sampling needs at least two classes");
    members_.resize(ds.num_classes);
    for (std::size_t i = 0; i < ds.size(); ++i) members_.at(static_cast<std::size_t>(ds.labels[i])).push_back(i);
    for (std::size_t k = 0; k < members_.size(); ++k)
        if (members_[k].size() < 2)
            throw DataError(ds.split + ": class " + std::to_string(k) + " has " + std::to_string(members_[k].size()) +
                            " samples; pair sampling needs at least 2");
}

PairBatch PairSampler::sample(std::size_t pairs, std::mt19937_64& rng) const {
    const std::size_t K = members_.size();
    PairBatch pb;
    std::bernoulli_distribution coin(0.5);
    std::uniform_int_distribution<std::size_t> cls(0, K - 1), other(0, K - 2);
    auto member = [&](std::size_t k) {
        std::uniform_int_distribution<std::size_t> d(0, members_[k].size() - 1);
        return members_[k][d(rng)];
    };
    for (std::size_t i = 0; i < pairs; ++i) {
        std::size_t a, b;
        int ya, yb;
        if (coin(rng)) {
            const std::size_t k = cls(rng);
            const auto& m = members_[k];
            std::uniform_int_distribution<std::size_t> d(0, m.size() - 1), d2(0, m.size() - 2);
            const std::size_t ia = d(rng);
            std::size_t ib = d2(rng);
            if (ib >= ia) ++ib;
            a = m[ia];
            b = m[ib];
            ya = yb = static_cast<int>(k);
        } else {
            const std::size_t ka = cls(rng);
            std::size_t kb = other(rng);
            if (kb >= ka) ++kb;
            a = member(ka);
            b = member(kb);
            ya = static_cast<int>(ka);
            yb = static_cast<int>(kb);
        }
        pb.index_a.push_back(a);
        pb.index_b.push_back(b);
        pb.labels_a.push_back(ya);
        pb.labels_b.push_back(yb);
        pb.same_class.push_back(ya == yb);
    }
    return pb;
}

PairBatch sample_pairs(const Dataset& ds, std::size_t pairs, std::mt19937_64& rng) {
    return PairSampler(ds).sample(pairs, rng);
}

template <typename T>
Tensor<T> prepare_batch(const Dataset& ds, std::span<const std::size_t> indices, std::mt19937_64* augment_rng,
                        const TrainConfig& cfg) {
    require_stats(ds);
    auto x = gather_images(ds, indices);
    if (augment_rng) augment(x, *augment_rng, {cfg.augment_flip, cfg.augment_crop, cfg.crop_pad});
    normalize(x, ds.mean, ds.stddev);
    if constexpr (std::is_same_v<T, float>)
        return x;
    else
        return x.template cast<T>();
}

template <typename T>
void recompute_bn_statistics(ModelState<T>& model, const Dataset& train, std::size_t batch_size) {
    if (model.running.empty()) return;
    for (auto& r : model.running) {
        std::fill(r.stats.mean.values().begin(), r.stats.mean.values().end(), T(0));
        std::fill(r.stats.var.values().begin(), r.stats.var.values().end(), T(1));
    }
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    TrainConfig plain;
    std::size_t k = 0;
    for (auto idx : batches(order, batch_size)) {
        auto x = prepare_batch<T>(train, idx, nullptr, plain);
        ad::Graph<T> g;
        auto p = bind_parameters(g, model, false);
        ForwardOptions opt{ad::Mode::train, true, 1.0 / static_cast<double>(k + 1)};
        forward(g, model, p, g.constant(std::move(x)), opt);
        ++k;
    }
}

template <typename T>
double validation_top1(ModelState<T>& model, const Dataset& ds) {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    auto x = prepare_batch<T>(ds, all, nullptr, TrainConfig{});
    auto inf = infer(model, x);
    return top1_accuracy(inf.logits, std::span<const int>(ds.labels));
}

template <typename T>
EvalResult evaluate(ModelState<T>& model, const Dataset& ds, std::uint64_t kmeans_seed, const std::string& tag) {
    std::vector<std::size_t> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    auto x = prepare_batch<T>(ds, all, nullptr, TrainConfig{});
    auto inf = infer(model, x);
    EvalResult r;
    r.predictions = argmax_rows(inf.logits);
    r.top1 = top1_accuracy(inf.logits, std::span<const int>(ds.labels));
    r.embeddings = make_embeddings(inf.embeddings, ds.labels, tag);
    r.nmi = nmi(r.embeddings, ds.num_classes, kmeans_seed);
    r.clusters = cluster_stats(r.embeddings);
    return r;
}

template <typename T>
PhaseResult<T> train_phase1(ModelState<T> model, NeuromodulatorState<T> nm, const Dataset& train, const Dataset& val,
                            const TrainConfig& cfg, Objective objective, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train.size() < 2) throw DataError("phase 1: training set needs at least two samples");
    if (val.size() == 0) throw DataError("phase 1: empty validation set");
    auto rng = phase_rng(cfg.seed, 1);
    OptimizerState<T> opt;
    init_velocity(opt, model, nm);
    SwaState<T> swa_theta, swa_phi;
    PhaseResult<T> r;
    std::vector<std::size_t> order(train.size());
    const bool aug = cfg.augment_flip || cfg.augment_crop;
    for (std::size_t e = 1; e <= cfg.epochs_phase1; ++e) {
        opt.lr = cosine_lr(e - 1, cfg.epochs_phase1, cfg.lr_phase1);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        LossValues acc;
        std::size_t n = 0;
        for (auto idx : batches(order, cfg.batch_size)) {
            auto x = prepare_batch<T>(train, idx, aug ? &rng : nullptr, cfg);
            auto labels = gather_labels(train, idx);
            try {
                accumulate(acc, phase1_step(model, nm, opt, x, labels, cfg, objective));
            } catch (const DivergenceError& err) {
                throw DivergenceError("phase 1, epoch " + std::to_string(e) + ": " + err.what());
            }
            ++n;
        }
        EpochRecord rec{e, 1, averaged(acc, n), validation_top1(model, val), opt.lr};
        r.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (e >= cfg.swa_start_epoch) {
            swa_theta.update(model.params);
            swa_phi.update(nm.params);
        }
        if (e == 1 || rec.val_top1 > r.best_val_top1) {
            r.model = model;
            r.nm = nm;
            r.best_epoch = e;
            r.best_val_top1 = rec.val_top1;
        } else if (e - r.best_epoch >= cfg.patience) {
            r.early_stopped = true;
            break;
        }
    }
    consider_average(r, model, swa_theta, swa_phi, nm, train, val, cfg);
    return r;
}

template <typename T>
PhaseResult<T> train_phase2(ModelState<T> model, const ModelState<T>& frozen, NeuromodulatorState<T> nm,
                            const Dataset& train, const Dataset& val, const TrainConfig& cfg,
                            const EpochCallback& on_epoch) {
    cfg.validate();
    if (val.size() == 0) throw DataError("phase 2: empty validation set");
    const PairSampler sampler(train);
    auto rng = phase_rng(cfg.seed, 2);
    OptimizerState<T> opt;
    init_velocity(opt, model, nm);
    SwaState<T> swa_theta, swa_phi;
    PhaseResult<T> r;
    // one pair-batch covers batch_size images, so an epoch sees as many
    // images as a phase-1 epoch
    const std::size_t pairs = std::max<std::size_t>(1, cfg.batch_size / 2);
    const std::size_t steps = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    const bool aug = cfg.augment_flip || cfg.augment_crop;
    for (std::size_t e = 1; e <= cfg.epochs_phase2; ++e) {
        opt.lr = cosine_lr(e - 1, cfg.epochs_phase2, cfg.lr_phase2);
        LossValues acc;
        for (std::size_t s = 0; s < steps; ++s) {
            auto pb = sampler.sample(pairs, rng);
            std::vector<std::size_t> idx(pb.index_a);
            idx.insert(idx.end(), pb.index_b.begin(), pb.index_b.end());
            auto x = prepare_batch<T>(train, idx, aug ? &rng : nullptr, cfg);
            try {
                accumulate(acc, phase2_step(model, frozen, nm, opt, x, pb, cfg));
            } catch (const DivergenceError& err) {
                throw DivergenceError("phase 2, epoch " + std::to_string(e) + ": " + err.what());
            }
        }
        EpochRecord rec{e, 2, averaged(acc, steps), validation_top1(model, val), opt.lr};
        r.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
        if (cfg.swa_phase2 && e >= cfg.swa_start_epoch) {
            swa_theta.update(model.params);
            swa_phi.update(nm.params);
        }
        if (e == 1 || rec.val_top1 > r.best_val_top1) {
            r.best_epoch = e;
            r.best_val_top1 = rec.val_top1;
        } else if (e - r.best_epoch >= cfg.patience) {
            r.early_stopped = true;
            break;
        }
    }
    r.model = model;
    r.nm = nm;
    r.best_val_top1 = r.history.back().val_top1;  // the final state is what phase 2 hands back
    consider_average(r, model, swa_theta, swa_phi, nm, train, val, cfg);
    return r;
}

#define NMHEBB_TRAINER(T)                                                                                              \
    template void sgd_nesterov_step<T>(std::span<T>, std::span<const T>, std::span<T>, double, double, double);     \
    template struct SwaState<T>;                                                                                    \
    template Tensor<T> prepare_batch<T>(const Dataset&, std::span<const std::size_t>, std::mt19937_64*,            \
                                        const TrainConfig&);                                                        \
    template void recompute_bn_statistics<T>(ModelState<T>&, const Dataset&, std::size_t);                          \
    template double validation_top1<T>(ModelState<T>&, const Dataset&);                                             \
    template EvalResult evaluate<T>(ModelState<T>&, const Dataset&, std::uint64_t, const std::string&);             \
    template PhaseResult<T> train_phase1<T>(ModelState<T>, NeuromodulatorState<T>, const Dataset&, const Dataset&, \
                                            const TrainConfig&, Objective, const EpochCallback&);                   \
    template PhaseResult<T> train_phase2<T>(ModelState<T>, const ModelState<T>&, NeuromodulatorState<T>,           \
                                            const Dataset&, const Dataset&, const TrainConfig&, const EpochCallback&);

NMHEBB_TRAINER(float)
NMHEBB_TRAINER(double)

}  // namespace nmhebb
