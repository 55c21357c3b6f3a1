#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lmk/markov.hpp"
#include "lmk/models.hpp"
#include "lmk/types.hpp"

namespace lmk {

/// A deterministic projection run: model, starting marginals, horizon.
struct Scenario {
    TransitionModel model;
    ProbVector p_start;
    std::int64_t population = 0;
    int horizon_days = 0;
    std::string label;
    /// States whose day-to-day increments are reported as population-scaled
    /// new counts (detected infections and deaths for the 5-state model).
    std::vector<int> new_count_states;
};

/// Scenario assembled from a bundled calibration.
Scenario make_scenario(const BaselineScenario& base, int horizon_days,
                       std::string label = {});

struct PeakSummary {
    int state = 0; // 0-based
    int day = 0;   // 1-based day within the projection
    double value = 0;
};

struct ProjectionOutput {
    std::string label;
    std::vector<std::string> state_labels;
    MatrixXd marginals;              // (horizon+1) x J, day t in row t-1
    MatrixXd new_counts;             // horizon x |new_count_states|
    std::vector<int> new_count_states;
    std::vector<PeakSummary> peaks;  // one per state
    std::int64_t population = 0;
};

/// Run the marginal recursion over the horizon, extract per-state peaks and
/// the population-scaled new counts (p_j(t) - p_j(t-1)) * population for the
/// flagged states. Absorbing-state marginals are checked nondecreasing.
ProjectionOutput project(const Scenario& scenario);

/// One projection per scale factor, the factor applied multiplicatively to
/// the named parameters.
std::vector<ProjectionOutput> sensitivity_scan(const Scenario& base,
                                               const std::vector<double>& scale_factors,
                                               const std::vector<std::string>& param_names);

struct DivergenceReport {
    MatrixXd gaps;       // days x J, f_j(t) - p_j(t)
    MatrixXd z_scores;   // gaps normalized by binomial standard errors
    double max_abs_gap = 0;
    double max_abs_z = 0;
};

/// Per-day, per-state gaps between a simulated panel's frequencies and the
/// deterministic marginals, with binomial-scale normalization.
DivergenceReport compare_panels(const ProjectionOutput& deterministic,
                                const TrajectoryPanel& panel);

} // namespace lmk
