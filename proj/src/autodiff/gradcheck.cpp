#include "nmhebb/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace nmhebb::ad {
namespace {

// Perturbs one leaf element and replays, tracking an element restored
// earlier without a replay of its own.
class Prober {
public:
    Prober(Graph<double>& g, std::span<const Var> outputs) : g_(g), outputs_(outputs) {}

    // Outputs with element i of p set to `value`; false if a branch switched.
    bool probe(Var p, std::size_t i, double value, std::vector<double>& f) {
        g_.mutable_leaf(p)[i] = value;
        std::vector<std::size_t> idx{i};
        if (pending_ && *pending_ != i) idx.push_back(*pending_);
        pending_.reset();
        g_.replay_elements(p, std::move(idx));
        f.resize(outputs_.size());
        for (std::size_t o = 0; o < outputs_.size(); ++o) f[o] = g_.value(outputs_[o])[0];
        return g_.branch_changes() == 0;
    }
    void restore(Var p, std::size_t i, double value) {
        g_.mutable_leaf(p)[i] = value;
        pending_ = i;
    }
    void finish(Var p) {
        const Var changed[] = {p};
        g_.replay(changed);
        pending_.reset();
    }

private:
    Graph<double>& g_;
    std::span<const Var> outputs_;
    std::optional<std::size_t> pending_;
};

}  // namespace

std::vector<GradCheckResult> check_gradients(Graph<double>& g, std::span<const Var> outputs,
                                             std::span<const Var> parameters, double eps, double floor) {
    for (Var out : outputs)
        if (g.value(out).size() != 1)
            throw ShapeError("check_gradients: output must be scalar, got " + shape_str(g.value(out).shape()));
    // analytic[o][p] = d outputs[o] / d parameters[p]
    std::vector<std::vector<std::vector<double>>> analytic(outputs.size());
    for (std::size_t o = 0; o < outputs.size(); ++o) {
        g.backward(outputs[o]);
        for (Var p : parameters) analytic[o].push_back(g.grad(p));
    }
    std::vector<double> f0(outputs.size());
    for (std::size_t o = 0; o < outputs.size(); ++o) f0[o] = g.value(outputs[o])[0];

    std::vector<GradCheckResult> res(outputs.size());
    std::vector<double> numeric(outputs.size()), fp, fm, f2;
    Prober probe(g, outputs);
    for (std::size_t pi = 0; pi < parameters.size(); ++pi) {
        const Var p = parameters[pi];
        const std::size_t n = g.value(p).size();
        for (std::size_t i = 0; i < n; ++i) {
            const double saved = g.value(p)[i];
            int kind = 0;  // 0 central, 1 one-sided, 2 unresolved
            double h = eps;
            for (int attempt = 0;; ++attempt, h /= 10) {
                const bool up = probe.probe(p, i, saved + h, fp);
                const bool down = probe.probe(p, i, saved - h, fm);
                if (up && down) {
                    for (std::size_t o = 0; o < outputs.size(); ++o) numeric[o] = (fp[o] - fm[o]) / (2 * h);
                    break;
                }
                // second-order one-sided difference on the side that kept p's branches
                const double dir = up ? 1.0 : -1.0;
                if ((up || down) && probe.probe(p, i, saved + 2 * dir * h, f2)) {
                    const auto& f1 = up ? fp : fm;
                    for (std::size_t o = 0; o < outputs.size(); ++o)
                        numeric[o] = dir * (-3 * f0[o] + 4 * f1[o] - f2[o]) / (2 * h);
                    kind = 1;
                    break;
                }
                if (attempt == 3) {
                    for (std::size_t o = 0; o < outputs.size(); ++o) numeric[o] = (fp[o] - fm[o]) / (2 * h);
                    kind = 2;
                    break;
                }
            }
            probe.restore(p, i, saved);

            for (std::size_t o = 0; o < outputs.size(); ++o) {
                const double a = analytic[o][pi][i];
                const double err = std::abs(a - numeric[o]) / std::max({std::abs(a), std::abs(numeric[o]), floor});
                GradCheckResult& r = res[o];
                ++r.checked;
                r.one_sided += kind == 1;
                r.unresolved += kind == 2;
                if (err > r.max_rel_error || r.checked == 1) {
                    r.max_rel_error = err;
                    r.worst_param = pi;
                    r.worst_index = i;
                    r.worst_analytic = a;
                    r.worst_numeric = numeric[o];
                }
            }
        }
        probe.finish(p);
    }
    return res;
}

GradCheckResult check_gradients(Graph<double>& g, Var output, std::span<const Var> parameters, double eps,
                                double floor) {
    const Var outs[] = {output};
    return check_gradients(g, outs, parameters, eps, floor).front();
}

}  // namespace nmhebb::ad
