#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nmhebb/graph.hpp"

namespace nmhebb::ad {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    // Location of the worst element.
    std::size_t worst_param = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    // Elements whose +/-eps probe crossed a relu/max switch and were measured
    // with a one-sided (second-order) difference on the smooth side instead,
    // and those where every probe down to eps/1000 crossed one.
    std::size_t one_sided = 0;
    std::size_t unresolved = 0;
};

// Compares reverse-mode gradients of the scalar `output` against central
// differences (f(p+eps) - f(p-eps)) / 2eps for every element of every
// parameter leaf. A probe that changes a relu/max branch is not measuring
// the derivative at p; such elements use a one-sided difference on the side
// that stays on p's branch, shrinking eps if both sides switch. Error per element is |a-b| / max(|a|, |b|, floor); the
// floor keeps components that are zero up to roundoff from dominating.
// Only nodes downstream of the perturbed leaf are re-evaluated. The graph is
// left with its original values.
GradCheckResult check_gradients(Graph<double>& g, Var output, std::span<const Var> parameters, double eps = 1e-5,
                                double floor = 1e-8);

// Several scalar outputs of one graph checked in a single sweep (each
// perturbation is replayed once and read for every output).
std::vector<GradCheckResult> check_gradients(Graph<double>& g, std::span<const Var> outputs,
                                             std::span<const Var> parameters, double eps = 1e-5, double floor = 1e-8);

}  // namespace nmhebb::ad
