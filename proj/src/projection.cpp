#include "lmk/projection.hpp"

#include <cmath>
#include <sstream>

namespace lmk {

namespace {

// A state is absorbing when its row is structurally e_j.
std::vector<int> absorbing_states(const TransitionModel& model) {
    std::vector<int> absorbing;
    if (model.zero_pattern.size() == 0) return absorbing;
    for (int i = 0; i < model.dim(); ++i) {
        bool all_zero = true;
        for (int j = 0; j < model.dim(); ++j)
            if (j != i && !model.zero_pattern(i, j)) all_zero = false;
        if (all_zero) absorbing.push_back(i);
    }
    return absorbing;
}

} // namespace

Scenario make_scenario(const BaselineScenario& base, int horizon_days, std::string label) {
    Scenario scenario;
    scenario.model = base.model;
    scenario.p_start = base.p0;
    scenario.population = base.population;
    scenario.horizon_days = horizon_days;
    scenario.label = label.empty() ? base.name : std::move(label);
    if (base.model.family == "siurd") {
        scenario.new_count_states = {2, 4}; // detected infections, deaths
    } else {
        scenario.new_count_states = absorbing_states(base.model);
    }
    return scenario;
}

ProjectionOutput project(const Scenario& scenario) {
    if (scenario.horizon_days < 1) throw config_error("projection horizon must be >= 1");
    if (scenario.population < 1) throw config_error("projection population must be >= 1");
    const int J = scenario.model.dim();
    for (int s : scenario.new_count_states)
        if (s < 0 || s >= J) throw config_error("new-count state index out of range");

    const auto path = propagate(scenario.model, scenario.p_start, scenario.horizon_days);
    const int rows = static_cast<int>(path.size());

    ProjectionOutput out;
    out.label = scenario.label;
    out.state_labels = scenario.model.states.labels;
    out.population = scenario.population;
    out.new_count_states = scenario.new_count_states;
    out.marginals.resize(rows, J);
    for (int t = 0; t < rows; ++t) out.marginals.row(t) = path[t].values.transpose();

    const int n_flagged = static_cast<int>(scenario.new_count_states.size());
    out.new_counts.resize(rows - 1, n_flagged);
    for (int t = 1; t < rows; ++t)
        for (int c = 0; c < n_flagged; ++c) {
            const int j = scenario.new_count_states[c];
            out.new_counts(t - 1, c) =
                (out.marginals(t, j) - out.marginals(t - 1, j)) * scenario.population;
        }

    for (int j = 0; j < J; ++j) {
        PeakSummary peak;
        peak.state = j;
        int arg = 0;
        for (int t = 1; t < rows; ++t)
            if (out.marginals(t, j) > out.marginals(arg, j)) arg = t;
        peak.day = arg + 1;
        peak.value = out.marginals(arg, j);
        out.peaks.push_back(peak);
    }

    // Absorbing-state marginals must not decrease along the projection.
    for (int j : absorbing_states(scenario.model))
        for (int t = 1; t < rows; ++t)
            if (out.marginals(t, j) < out.marginals(t - 1, j) - 1e-12) {
                std::ostringstream msg;
                msg << "cumulative marginal of state " << j + 1 << " decreased at day "
                    << t + 1;
                throw data_error(msg.str());
            }
    return out;
}

std::vector<ProjectionOutput> sensitivity_scan(const Scenario& base,
                                               const std::vector<double>& scale_factors,
                                               const std::vector<std::string>& param_names) {
    std::vector<int> indices;
    for (const auto& name : param_names)
        indices.push_back(base.model.theta_index(name));

    std::vector<ProjectionOutput> outputs;
    for (const double factor : scale_factors) {
        VectorXd theta = base.model.theta;
        for (int idx : indices) theta[idx] *= factor;
        Scenario scaled = base;
        scaled.model = base.model.with_theta(std::move(theta));
        std::ostringstream label;
        label << base.label << " x" << factor;
        scaled.label = label.str();
        outputs.push_back(project(scaled));
    }
    return outputs;
}

DivergenceReport compare_panels(const ProjectionOutput& deterministic,
                                const TrajectoryPanel& panel) {
    const int J = static_cast<int>(deterministic.marginals.cols());
    if (panel.n_states != J)
        throw config_error("panel and projection have different state counts");
    const int days = std::min<int>(panel.n_days, static_cast<int>(deterministic.marginals.rows()));
    const auto freqs = empirical_frequencies(panel);

    DivergenceReport report;
    report.gaps.resize(days, J);
    report.z_scores.resize(days, J);
    const double n = panel.n_individuals;
    for (int t = 0; t < days; ++t)
        for (int j = 0; j < J; ++j) {
            const double p = deterministic.marginals(t, j);
            const double gap = freqs[t].values[j] - p;
            const double se = std::sqrt(std::max(p * (1.0 - p), 0.0) / n);
            report.gaps(t, j) = gap;
            report.z_scores(t, j) = gap == 0.0 ? 0.0 : gap / std::max(se, 1e-300);
            report.max_abs_gap = std::max(report.max_abs_gap, std::abs(gap));
            report.max_abs_z = std::max(report.max_abs_z, std::abs(report.z_scores(t, j)));
        }
    return report;
}

} // namespace lmk
