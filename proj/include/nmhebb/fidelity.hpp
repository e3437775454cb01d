#pragma once

// Finite-difference verification of both training objectives on each
// backbone (the `gradcheck` command).

#include <cstdint>
#include <string>
#include <vector>

#include "nmhebb/backbones.hpp"
#include "nmhebb/gradcheck.hpp"

namespace nmhebb {

struct FidelityOptions {
    std::uint64_t seed = 1;
    double eps = 1e-5;
    // Denominator floor of the relative error. Central differences at
    // eps = 1e-5 resolve a gradient component only to about 1e-11, so a
    // component of 1e-8 cannot be compared relatively at 1e-4.
    double floor = 1e-6;
    double tolerance = 1e-4;
};

struct FidelityCase {
    Arch arch;
    std::string objective;  // "phase1" or "phase2"
    ad::GradCheckResult result;
    std::string worst_name;  // parameter holding the worst element
    double seconds = 0.0;    // shared sweep time of the backbone
    bool passed = false;
};

// Every theta and phi element of a 2-image batch (one pair for phase 2),
// 64-bit, both objectives from one forward pass per perturbation.
std::vector<FidelityCase> run_gradient_fidelity(const FidelityOptions& opt = {});

}  // namespace nmhebb
