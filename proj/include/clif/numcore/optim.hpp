#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "clif/numcore/graph.hpp"

namespace clif::num {

struct AdamState {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::uint64_t step = 0;

    struct Moments {
        Tensor first;
        Tensor second;
    };
    std::map<std::string, Moments> moments;

    explicit AdamState(double lr = 1e-4) : learning_rate(lr) {}
    void reset() {
        step = 0;
        moments.clear();
    }
};

/// One bias-corrected Adam update over every parameter in the store,
/// then zeroes the gradients.
///
/// A parameter whose gradient is identically zero keeps its value; its
/// moments are still decayed. Parameters that were not part of the last
/// graph therefore never drift through stale momentum.
void adam_step(ParamStore& store, AdamState& state);

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    // Denominator floor for the relative error of near-zero gradients.
    double abs_floor = 1e-6;
    // 0 checks every entry; otherwise a seeded sample per parameter.
    std::size_t max_entries_per_param = 0;
    std::uint64_t sample_seed = 1;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    std::size_t entries_checked = 0;
    bool passed = false;
};

// Builds the scalar loss from the store on a fresh graph.
using LossBuilder = std::function<Var(Graph&, ParamStore&)>;

/// Compares every parameter gradient against central differences.
GradCheckReport grad_check(const LossBuilder& build, ParamStore& store, const GradCheckOptions& options = {});

}  // namespace clif::num
