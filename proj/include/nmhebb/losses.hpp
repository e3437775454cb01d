#pragma once

// Objective terms of the two training phases.
//
//   phase 1:  CE + lambda_hebb1 * nu(CE) * R_hebb
//   phase 2:  CE_A + CE_B + lambda_metric * L_metric
//             + nu(mean CE) * (lambda_cons * |theta - theta_frozen|^2
//                              + lambda_hebb2 * (R_hebb(A) + R_hebb(B)) / 2)
//
// The CE value fed to the gate nu is detached: the backbone receives
// gradients from nu only through its multiplicative role, and the gate MLP
// receives gradients through nu.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nmhebb/backbones.hpp"

namespace nmhebb {

enum class HebbStat {
    mean,          // channel mean over batch and all positions
    max_per_map,   // batch mean of each map's spatial maximum
};

std::string hebb_stat_name(HebbStat s);
HebbStat parse_hebb_stat(const std::string& s);

struct LossConfig {
    double lambda_hebb1 = 0.1;
    double lambda_hebb2 = 0.1;
    double lambda_metric = 0.5;
    double lambda_cons = 1e-3;
    double margin = 1.0;
    HebbStat hebb_stat = HebbStat::mean;
};

// Gate MLP 1 -> 8 (ReLU) -> 1 (sigmoid). Parameters: nm.w1 [1,8], nm.b1 [8],
// nm.w2 [8,1], nm.b2 [1].
template <typename T>
struct NeuromodulatorState {
    std::vector<NamedTensor<T>> params;

    static constexpr std::size_t hidden = 8;
    static NeuromodulatorState zeros();
    // Kaiming-uniform weights, zero biases; drawn in double.
    static NeuromodulatorState init(std::uint64_t seed);

    template <typename U>
    NeuromodulatorState<U> cast() const {
        NeuromodulatorState<U> o;
        for (const auto& p : params) o.params.push_back({p.name, p.value.template cast<U>()});
        return o;
    }
};

struct LossValues {
    double total = 0;
    double ce = 0;             // phase 2: ce_a + ce_b
    double ce_a = 0, ce_b = 0;
    double hebbian = 0;        // phase 2: mean of the two regularizers
    double nu = 0;
    double metric = 0;
    double consolidation = 0;  // unweighted squared distance
    // Weighted contributions; total == ce + hebb_term + metric_term + cons_term.
    double hebb_term = 0, metric_term = 0, cons_term = 0;
};

struct LossBreakdown {
    ad::Var total;
    LossValues values;
};

// Mean over rows of -log softmax(logits)[label]; max-subtracted.
template <typename T>
ad::Var cross_entropy(ad::Graph<T>& g, ad::Var logits, std::span<const int> labels);

// (1/Cout) * sum_f (abar_f - wbar_f)^2
template <typename T>
ad::Var hebbian_regularizer(ad::Graph<T>& g, ad::Var activation, ad::Var weight, HebbStat stat = HebbStat::mean);

// nu = sigmoid(MLP(ce)); `ce` is used as given (callers pass a detached value).
template <typename T>
ad::Var neuromodulator(ad::Graph<T>& g, const std::vector<ad::Var>& nm_params, ad::Var ce);

template <typename T>
double neuromodulator_value(const NeuromodulatorState<T>& nm, double ce);

// Rows of e_a/e_b [P,D] are pairs. Same class: |ea-eb|^2; different class:
// max(0, m - |ea-eb|)^2. Averaged over pairs. At |ea-eb| == 0 the
// different-class gradient is taken as 0.
template <typename T>
ad::Var pairwise_margin_loss(ad::Graph<T>& g, ad::Var e_a, ad::Var e_b, std::span<const std::uint8_t> same_class,
                             double margin);

// sum over all parameters of (theta - frozen)^2
template <typename T>
ad::Var consolidation_penalty(ad::Graph<T>& g, const std::vector<ad::Var>& params, const ModelState<T>& frozen);

template <typename T>
LossBreakdown phase1_loss(ad::Graph<T>& g, const ForwardTaps& taps, std::span<const int> labels,
                          const std::vector<ad::Var>& nm_params, const LossConfig& cfg);

template <typename T>
LossBreakdown phase2_loss(ad::Graph<T>& g, const ForwardTaps& taps_a, const ForwardTaps& taps_b,
                          std::span<const int> labels_a, std::span<const int> labels_b,
                          std::span<const std::uint8_t> same_class, const std::vector<ad::Var>& params,
                          const ModelState<T>& frozen, const std::vector<ad::Var>& nm_params, const LossConfig& cfg);

template <typename T>
std::vector<ad::Var> bind_neuromodulator(ad::Graph<T>& g, const NeuromodulatorState<T>& nm, bool trainable = true);

}  // namespace nmhebb
