#include "nmhebb/losses.hpp"

#include <cmath>
#include <memory>
#include <random>

namespace nmhebb {

std::string hebb_stat_name(HebbStat s) { return s == HebbStat::mean ? "mean" : "max_per_map"; }

HebbStat parse_hebb_stat(const std::string& s) {
    if (s == "mean") return HebbStat::mean;
    if (s == "max_per_map") return HebbStat::max_per_map;
    throw ConfigError("unknown hebb_activation_stat '" + s + "' (expected mean or max_per_map)");
}

template <typename T>
NeuromodulatorState<T> NeuromodulatorState<T>::zeros() {
    NeuromodulatorState s;
    s.params = {{"nm.w1", Tensor<T>({1, hidden})},
                {"nm.b1", Tensor<T>({hidden})},
                {"nm.w2", Tensor<T>({hidden, 1})},
                {"nm.b2", Tensor<T>({1})}};
    return s;
}

template <typename T>
NeuromodulatorState<T> NeuromodulatorState<T>::init(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto s = zeros();
    std::uniform_real_distribution<double> u1(-std::sqrt(6.0), std::sqrt(6.0));
    for (auto& v : s.params[0].value.values()) v = static_cast<T>(u1(rng));
    std::uniform_real_distribution<double> u2(-std::sqrt(6.0 / hidden), std::sqrt(6.0 / hidden));
    for (auto& v : s.params[2].value.values()) v = static_cast<T>(u2(rng));
    return s;
}

template <typename T>
std::vector<ad::Var> bind_neuromodulator(ad::Graph<T>& g, const NeuromodulatorState<T>& nm, bool trainable) {
    std::vector<ad::Var> v;
    for (const auto& p : nm.params) v.push_back(trainable ? g.parameter(p.value) : g.constant(p.value));
    return v;
}

template <typename T>
ad::Var cross_entropy(ad::Graph<T>& g, ad::Var logits, std::span<const int> labels) {
    const Shape& s = g.value(logits).shape();
    if (s.size() != 2) throw ShapeError("cross_entropy: logits must be [N,K], got " + shape_str(s));
    const std::size_t N = s[0], K = s[1];
    if (N == 0) throw ShapeError("cross_entropy: empty batch");
    if (labels.size() != N)
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(N) + " rows");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= K)
            throw DataError("cross_entropy: label " + std::to_string(y) + " outside [0," + std::to_string(K) + ")");

    auto y = std::make_shared<std::vector<int>>(labels.begin(), labels.end());
    auto prob = std::make_shared<std::vector<T>>(N * K);
    auto fwd = [=](ad::Graph<T>& gr, typename ad::Graph<T>::Node& self) {
        const T* L = gr.value(logits).data();
        T total = 0;
        for (std::size_t n = 0; n < N; ++n) {
            const T* row = L + n * K;
            T mx = row[0];
            for (std::size_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
            T z = 0;
            for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
            for (std::size_t k = 0; k < K; ++k) (*prob)[n * K + k] = std::exp(row[k] - mx) / z;
            total += (mx + std::log(z)) - row[(*y)[n]];
        }
        self.value[0] = total / static_cast<T>(N);
    };
    auto bwd = [=](ad::Graph<T>& gr, const typename ad::Graph<T>::Node& self) {
        if (!gr.requires_grad(logits)) return;
        auto& d = gr.grad_buffer(logits.id);
        const T s = self.grad[0] / static_cast<T>(N);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < K; ++k) {
                const T onehot = static_cast<std::size_t>((*y)[n]) == k ? T(1) : T(0);
                d[n * K + k] += s * ((*prob)[n * K + k] - onehot);
            }
    };
    return g.push({}, {logits}, fwd, bwd);
}

template <typename T>
ad::Var hebbian_regularizer(ad::Graph<T>& g, ad::Var activation, ad::Var weight, HebbStat stat) {
    const Shape& as = g.value(activation).shape();
    const Shape& ws = g.value(weight).shape();
    if (as.size() != 4) throw ShapeError("hebbian_regularizer: activation must be [N,C,H,W], got " + shape_str(as));
    if (ws.size() != 4) throw ShapeError("hebbian_regularizer: weight must be [Cout,Cin,K,K], got " + shape_str(ws));
    if (as[1] != ws[0])
        throw ShapeError("hebbian_regularizer: activation has " + std::to_string(as[1]) + " channels, weight has " +
                         std::to_string(ws[0]) + " filters");
    const std::size_t N = as[0], C = as[1], hw = as[2] * as[3], fan = ws[1] * ws[2] * ws[3];

    struct Ctx {
        std::vector<T> gap;                  // abar_f - wbar_f
        std::vector<std::size_t> argmax;     // [N*C], max_per_map only
        std::vector<std::size_t> base;       // argmax at creation
    };
    auto ctx = std::make_shared<Ctx>();
    ctx->gap.resize(C);
    if (stat == HebbStat::max_per_map) ctx->argmax.resize(N * C);

    auto fwd = [=](ad::Graph<T>& gr, typename ad::Graph<T>::Node& self) {
        const T* A = gr.value(activation).data();
        const T* W = gr.value(weight).data();
        T r = 0;
        for (std::size_t f = 0; f < C; ++f) {
            T a = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const T* map = A + (n * C + f) * hw;
                if (stat == HebbStat::mean) {
                    for (std::size_t j = 0; j < hw; ++j) a += map[j];
                } else {
                    std::size_t best = 0;
                    for (std::size_t j = 1; j < hw; ++j)
                        if (map[j] > map[best]) best = j;
                    ctx->argmax[n * C + f] = best;
                    a += map[best];
                }
            }
            a /= static_cast<T>(stat == HebbStat::mean ? N * hw : N);
            T w = 0;
            for (std::size_t j = 0; j < fan; ++j) w += W[f * fan + j];
            w /= static_cast<T>(fan);
            ctx->gap[f] = a - w;
            r += (a - w) * (a - w);
        }
        self.value[0] = r / static_cast<T>(C);
        if (stat != HebbStat::max_per_map) return;
        if (!gr.replaying())
            ctx->base = ctx->argmax;
        else
            for (std::size_t i = 0; i < ctx->argmax.size(); ++i) gr.note_branch_changes(ctx->argmax[i] != ctx->base[i]);
    };
    auto bwd = [=](ad::Graph<T>& gr, const typename ad::Graph<T>::Node& self) {
        const T s = self.grad[0] * T(2) / static_cast<T>(C);
        if (gr.requires_grad(activation)) {
            auto& d = gr.grad_buffer(activation.id);
            for (std::size_t f = 0; f < C; ++f)
                for (std::size_t n = 0; n < N; ++n) {
                    T* map = d.data() + (n * C + f) * hw;
                    if (stat == HebbStat::mean) {
                        const T v = s * ctx->gap[f] / static_cast<T>(N * hw);
                        for (std::size_t j = 0; j < hw; ++j) map[j] += v;
                    } else {
                        map[ctx->argmax[n * C + f]] += s * ctx->gap[f] / static_cast<T>(N);
                    }
                }
        }
        if (gr.requires_grad(weight)) {
            auto& d = gr.grad_buffer(weight.id);
            for (std::size_t f = 0; f < C; ++f) {
                const T v = -s * ctx->gap[f] / static_cast<T>(fan);
                for (std::size_t j = 0; j < fan; ++j) d[f * fan + j] += v;
            }
        }
    };
    return g.push({}, {activation, weight}, fwd, bwd);
}

template <typename T>
ad::Var neuromodulator(ad::Graph<T>& g, const std::vector<ad::Var>& nm, ad::Var ce) {
    if (nm.size() != 4) throw ShapeError("neuromodulator: expected 4 parameter tensors");
    auto x = ad::reshape(g, ce, {1, 1});
    auto h = ad::relu(g, ad::dense(g, x, nm[0], nm[1]));
    auto o = ad::dense(g, h, nm[2], nm[3]);
    return ad::reshape(g, ad::sigmoid(g, o), {});
}

template <typename T>
double neuromodulator_value(const NeuromodulatorState<T>& nm, double ce) {
    ad::Graph<T> g;
    auto vars = bind_neuromodulator(g, nm, false);
    return static_cast<double>(g.value(neuromodulator(g, vars, g.constant(Tensor<T>({}, static_cast<T>(ce)))))[0]);
}

template <typename T>
ad::Var pairwise_margin_loss(ad::Graph<T>& g, ad::Var e_a, ad::Var e_b, std::span<const std::uint8_t> same_class,
                             double margin) {
    const Shape& sa = g.value(e_a).shape();
    if (sa != g.value(e_b).shape())
        throw ShapeError("pairwise_margin_loss: embedding shapes differ " + shape_str(sa) + " vs " +
                         shape_str(g.value(e_b).shape()));
    if (!(margin > 0)) throw ConfigError("pairwise_margin_loss: margin must be > 0");
    const std::size_t P = sa.size() == 1 ? 1 : sa.at(0);
    const std::size_t D = g.value(e_a).size() / std::max<std::size_t>(P, 1);
    if (P == 0 || same_class.size() != P)
        throw ShapeError("pairwise_margin_loss: " + std::to_string(same_class.size()) + " flags for " +
                         std::to_string(P) + " pairs");
    auto same = std::make_shared<std::vector<std::uint8_t>>(same_class.begin(), same_class.end());
    auto coef = std::make_shared<std::vector<T>>(P);  // d loss_p / d (ea - eb), divided by diff
    const T m = static_cast<T>(margin);

    auto fwd = [=](ad::Graph<T>& gr, typename ad::Graph<T>::Node& self) {
        const T* A = gr.value(e_a).data();
        const T* B = gr.value(e_b).data();
        T total = 0;
        for (std::size_t p = 0; p < P; ++p) {
            T d2 = 0;
            for (std::size_t j = 0; j < D; ++j) {
                const T d = A[p * D + j] - B[p * D + j];
                d2 += d * d;
            }
            if ((*same)[p]) {
                total += d2;
                (*coef)[p] = T(2);
            } else {
                const T dist = std::sqrt(d2);
                const T slack = std::max(T(0), m - dist);
                total += slack * slack;
                (*coef)[p] = (slack > T(0) && dist > T(0)) ? -T(2) * slack / dist : T(0);
            }
        }
        self.value[0] = total / static_cast<T>(P);
    };
    auto bwd = [=](ad::Graph<T>& gr, const typename ad::Graph<T>::Node& self) {
        const T* A = gr.value(e_a).data();
        const T* B = gr.value(e_b).data();
        const T s = self.grad[0] / static_cast<T>(P);
        const bool ga = gr.requires_grad(e_a), gb = gr.requires_grad(e_b);
        T* da = ga ? gr.grad_buffer(e_a.id).data() : nullptr;
        T* db = gb ? gr.grad_buffer(e_b.id).data() : nullptr;
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t j = 0; j < D; ++j) {
                const T v = s * (*coef)[p] * (A[p * D + j] - B[p * D + j]);
                if (da) da[p * D + j] += v;
                if (db) db[p * D + j] -= v;
            }
    };
    return g.push({}, {e_a, e_b}, fwd, bwd);
}

template <typename T>
ad::Var consolidation_penalty(ad::Graph<T>& g, const std::vector<ad::Var>& params, const ModelState<T>& frozen) {
    if (params.size() != frozen.params.size())
        throw ShapeError("consolidation_penalty: " + std::to_string(params.size()) + " parameters vs " +
                         std::to_string(frozen.params.size()) + " frozen");
    auto anchor = std::make_shared<std::vector<Tensor<T>>>();
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (g.value(params[i]).shape() != frozen.params[i].value.shape())
            throw ShapeError("consolidation_penalty: parameter '" + frozen.params[i].name + "' has shape " +
                             shape_str(g.value(params[i]).shape()) + ", frozen copy " +
                             shape_str(frozen.params[i].value.shape()));
        anchor->push_back(frozen.params[i].value);
    }
    // per-tensor partial sums; a replay only redoes the tensors that moved
    auto partial = std::make_shared<std::vector<T>>(params.size(), T(0));
    auto fwd = [=](ad::Graph<T>& gr, typename ad::Graph<T>::Node& self) {
        T total = 0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (gr.input_dirty(params[i].id)) {
                const T* cur = gr.value(params[i]).data();
                const T* ref = (*anchor)[i].data();
                const std::size_t n = (*anchor)[i].size();
                T acc[4] = {0, 0, 0, 0};
                std::size_t j = 0;
                for (; j + 4 <= n; j += 4)
                    for (int k = 0; k < 4; ++k) acc[k] += (cur[j + k] - ref[j + k]) * (cur[j + k] - ref[j + k]);
                for (; j < n; ++j) acc[0] += (cur[j] - ref[j]) * (cur[j] - ref[j]);
                (*partial)[i] = (acc[0] + acc[1]) + (acc[2] + acc[3]);
            }
            total += (*partial)[i];
        }
        self.value[0] = total;
    };
    auto bwd = [=](ad::Graph<T>& gr, const typename ad::Graph<T>::Node& self) {
        const T s = T(2) * self.grad[0];
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!gr.requires_grad(params[i])) continue;
            const auto& cur = gr.value(params[i]);
            const auto& ref = (*anchor)[i];
            auto& d = gr.grad_buffer(params[i].id);
            for (std::size_t j = 0; j < cur.size(); ++j) d[j] += s * (cur[j] - ref[j]);
        }
    };
    return g.push({}, params, fwd, bwd);
}

template <typename T>
LossBreakdown phase1_loss(ad::Graph<T>& g, const ForwardTaps& taps, std::span<const int> labels,
                          const std::vector<ad::Var>& nm_params, const LossConfig& cfg) {
    if (!(cfg.lambda_hebb1 >= 0)) throw ConfigError("lambda_hebb1 must be >= 0");
    auto ce = cross_entropy(g, taps.logits, labels);
    auto r = hebbian_regularizer(g, taps.hebbian_activation, taps.hebbian_weight, cfg.hebb_stat);
    auto nu = neuromodulator(g, nm_params, g.detach(ce));
    auto hebb_term = ad::scale(g, ad::mul(g, nu, r), static_cast<T>(cfg.lambda_hebb1));
    auto total = ad::add(g, ce, hebb_term);

    LossValues v;
    v.total = g.value(total)[0];
    v.ce = v.ce_a = g.value(ce)[0];
    v.hebbian = g.value(r)[0];
    v.nu = g.value(nu)[0];
    v.hebb_term = g.value(hebb_term)[0];
    return {total, v};
}

template <typename T>
LossBreakdown phase2_loss(ad::Graph<T>& g, const ForwardTaps& taps_a, const ForwardTaps& taps_b,
                          std::span<const int> labels_a, std::span<const int> labels_b,
                          std::span<const std::uint8_t> same_class, const std::vector<ad::Var>& params,
                          const ModelState<T>& frozen, const std::vector<ad::Var>& nm_params, const LossConfig& cfg) {
    auto ce_a = cross_entropy(g, taps_a.logits, labels_a);
    auto ce_b = cross_entropy(g, taps_b.logits, labels_b);
    auto ce = ad::add(g, ce_a, ce_b);
    auto metric = pairwise_margin_loss(g, taps_a.embedding, taps_b.embedding, same_class, cfg.margin);
    auto cons = consolidation_penalty(g, params, frozen);
    auto r_a = hebbian_regularizer(g, taps_a.hebbian_activation, taps_a.hebbian_weight, cfg.hebb_stat);
    auto r_b = hebbian_regularizer(g, taps_b.hebbian_activation, taps_b.hebbian_weight, cfg.hebb_stat);
    auto r = ad::scale(g, ad::add(g, r_a, r_b), T(0.5));
    auto nu = neuromodulator(g, nm_params, g.detach(ad::scale(g, ce, T(0.5))));

    auto cons_w = ad::scale(g, cons, static_cast<T>(cfg.lambda_cons));
    auto hebb_w = ad::scale(g, r, static_cast<T>(cfg.lambda_hebb2));
    auto metric_term = ad::scale(g, metric, static_cast<T>(cfg.lambda_metric));
    auto gated = ad::mul(g, nu, ad::add(g, cons_w, hebb_w));
    auto total = ad::add(g, ad::add(g, ce, metric_term), gated);

    LossValues v;
    v.total = g.value(total)[0];
    v.ce_a = g.value(ce_a)[0];
    v.ce_b = g.value(ce_b)[0];
    v.ce = g.value(ce)[0];
    v.hebbian = g.value(r)[0];
    v.nu = g.value(nu)[0];
    v.metric = g.value(metric)[0];
    v.consolidation = g.value(cons)[0];
    v.metric_term = g.value(metric_term)[0];
    v.cons_term = v.nu * g.value(cons_w)[0];
    v.hebb_term = v.nu * g.value(hebb_w)[0];
    return {total, v};
}

#define NMHEBB_INSTANTIATE(T)                                                                                        \
    template struct NeuromodulatorState<T>;                                                                          \
    template std::vector<ad::Var> bind_neuromodulator<T>(ad::Graph<T>&, const NeuromodulatorState<T>&, bool);       \
    template ad::Var cross_entropy<T>(ad::Graph<T>&, ad::Var, std::span<const int>);                                 \
    template ad::Var hebbian_regularizer<T>(ad::Graph<T>&, ad::Var, ad::Var, HebbStat);                              \
    template ad::Var neuromodulator<T>(ad::Graph<T>&, const std::vector<ad::Var>&, ad::Var);                         \
    template double neuromodulator_value<T>(const NeuromodulatorState<T>&, double);                                  \
    template ad::Var pairwise_margin_loss<T>(ad::Graph<T>&, ad::Var, ad::Var, std::span<const std::uint8_t>, double); \
    template ad::Var consolidation_penalty<T>(ad::Graph<T>&, const std::vector<ad::Var>&, const ModelState<T>&);     \
    template LossBreakdown phase1_loss<T>(ad::Graph<T>&, const ForwardTaps&, std::span<const int>,                   \
                                          const std::vector<ad::Var>&, const LossConfig&);                           \
    template LossBreakdown phase2_loss<T>(ad::Graph<T>&, const ForwardTaps&, const ForwardTaps&,                     \
                                          std::span<const int>, std::span<const int>,                                \
                                          std::span<const std::uint8_t>, const std::vector<ad::Var>&,                \
                                          const ModelState<T>&, const std::vector<ad::Var>&, const LossConfig&);

NMHEBB_INSTANTIATE(float)
NMHEBB_INSTANTIATE(double)
#undef NMHEBB_INSTANTIATE

}  // namespace nmhebb
