#include <doctest.h>

#include <cmath>

#include "lmk/projection.hpp"

using namespace lmk;

namespace {

Scenario baseline_60d() {
    return make_scenario(baseline_scenario("sim-baseline"), 60);
}

} // namespace

TEST_CASE("project: identity model produces zero new counts") {
    Scenario scenario;
    scenario.model = build_homog3(Homog3Params{});
    VectorXd v(3);
    v << 0.5, 0.3, 0.2;
    scenario.p_start = ProbVector(v);
    scenario.population = 1000;
    scenario.horizon_days = 10;
    scenario.label = "identity";
    scenario.new_count_states = {2};
    const ProjectionOutput out = project(scenario);
    CHECK(out.new_counts.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("project: baseline starts at about 60 new detections per day") {
    const ProjectionOutput out = project(baseline_60d());
    REQUIRE(out.new_count_states[0] == 2);
    for (int day = 2; day <= 5; ++day) {
        const double new_id = out.new_counts(day - 2, 0);
        CHECK(new_id > 30.0);
        CHECK(new_id < 120.0);
    }
    // exact at day 2: the exogenous detection intensity times the population
    CHECK(out.new_counts(0, 0) == doctest::Approx(60.0).epsilon(1e-3));
}

TEST_CASE("project: peak extraction agrees with a brute scan") {
    const ProjectionOutput out = project(baseline_60d());
    for (const auto& peak : out.peaks) {
        int arg = 0;
        for (int t = 0; t < out.marginals.rows(); ++t)
            if (out.marginals(t, peak.state) > out.marginals(arg, peak.state)) arg = t;
        CHECK(peak.day == arg + 1);
        CHECK(peak.value == out.marginals(arg, peak.state));
    }
}

TEST_CASE("project: detected-infection growth eventually flattens") {
    const ProjectionOutput out = project(baseline_60d());
    // first differences of p3, then their argmax; second differences must be
    // negative beyond it (exits catch up with arrivals)
    const int rows = static_cast<int>(out.marginals.rows());
    std::vector<double> diff;
    for (int t = 1; t < rows; ++t) diff.push_back(out.marginals(t, 2) - out.marginals(t - 1, 2));
    int peak = 0;
    for (std::size_t i = 0; i < diff.size(); ++i)
        if (diff[i] > diff[peak]) peak = static_cast<int>(i);
    REQUIRE(peak + 2 < static_cast<int>(diff.size()));
    for (std::size_t i = peak + 1; i < diff.size(); ++i) CHECK(diff[i] - diff[i - 1] < 0.0);
}

TEST_CASE("sensitivity_scan: factor one reproduces the base run") {
    const Scenario base = baseline_60d();
    const ProjectionOutput direct = project(base);
    const auto scanned = sensitivity_scan(base, {1.0}, {"b1", "b2", "c1", "c2"});
    REQUIRE(scanned.size() == 1);
    CHECK((scanned[0].marginals - direct.marginals).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("sensitivity_scan: doubling and halving order the curves, deaths overlap") {
    const Scenario base = baseline_60d();
    const auto scanned = sensitivity_scan(base, {0.5, 1.0, 2.0}, {"b1", "b2", "c1", "c2"});
    REQUIRE(scanned.size() == 3);
    const auto& haf = scanned[0].marginals;
    const auto& mid = scanned[1].marginals;
    const auto& dbl = scanned[2].marginals;
    for (int t = 5; t <= 60; ++t)
        for (int j : {1, 2, 3}) {
            CHECK(dbl(t, j) >= mid(t, j) * (1.0 - 1e-9));
            CHECK(mid(t, j) >= haf(t, j) * (1.0 - 1e-9));
        }
    // the death marginal is essentially unaffected
    double max_rel_gap = 0.0;
    for (int t = 1; t <= 60; ++t) {
        const double base_p5 = mid(t, 4);
        max_rel_gap = std::max(max_rel_gap, std::abs(dbl(t, 4) - base_p5) / base_p5);
        max_rel_gap = std::max(max_rel_gap, std::abs(haf(t, 4) - base_p5) / base_p5);
    }
    CHECK(max_rel_gap < 0.20);
}

TEST_CASE("sensitivity_scan: scaling a zero parameter changes nothing") {
    SiurdParams sp;
    sp.a1 = std::log(3e-6);
    sp.a2 = std::log(1e-6);
    sp.b1 = sp.b2 = 800.0;
    sp.c1 = sp.c2 = 0.0; // no detected-share feedback
    sp.p15 = 3e-5;
    sp.p23 = 1e-6;
    sp.p24 = 0.03;
    sp.p25 = 0.004;
    sp.p34 = 0.03;
    sp.p35 = 0.013;
    sp.p45 = 3e-5;
    Scenario scenario;
    scenario.model = build_siurd(sp);
    scenario.p_start = ProbVector::unit(5, 0);
    scenario.population = 1000000;
    scenario.horizon_days = 40;
    scenario.label = "zero-c";
    scenario.new_count_states = {2, 4};
    const auto scanned = sensitivity_scan(scenario, {2.0}, {"c1", "c2"});
    const ProjectionOutput direct = project(scenario);
    CHECK((scanned[0].marginals - direct.marginals).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("sensitivity_scan: unknown parameter name throws") {
    CHECK_THROWS_AS(sensitivity_scan(baseline_60d(), {2.0}, {"b9"}), config_error);
}

TEST_CASE("project: mass conservation over a 25-year horizon") {
    const auto base = baseline_scenario("france-estimated");
    Scenario scenario = make_scenario(base, 9125, "long-run");
    VectorXd start(5);
    start << 0.995, 0.002, 0.001, 0.001, 0.001;
    scenario.p_start = ProbVector(start);
    const ProjectionOutput out = project(scenario);
    REQUIRE(out.marginals.rows() == 9126);
    for (int t = 0; t < out.marginals.rows(); ++t)
        CHECK(std::abs(out.marginals.row(t).sum() - 1.0) <= 1e-12);
    // deaths never decrease
    for (int t = 1; t < out.marginals.rows(); ++t)
        CHECK(out.marginals(t, 4) >= out.marginals(t - 1, 4) - 1e-12);
}

TEST_CASE("compare_panels: a same-model panel stays within five standard errors") {
    Homog3Params hp;
    hp.p12 = 0.08;
    hp.p13 = 0.02;
    hp.p21 = 0.05;
    hp.p23 = 0.05;
    hp.p31 = 0.01;
    hp.p32 = 0.04;
    const TransitionModel model = build_homog3(hp);
    VectorXd v(3);
    v << 0.7, 0.2, 0.1;
    Scenario scenario;
    scenario.model = model;
    scenario.p_start = ProbVector(v);
    scenario.population = 100000;
    scenario.horizon_days = 19;
    scenario.label = "chain";
    const ProjectionOutput det = project(scenario);
    const TrajectoryPanel panel = simulate_panel(model, scenario.p_start, 100000, 20, 613);
    const DivergenceReport report = compare_panels(det, panel);
    CHECK(report.max_abs_z <= 5.0);
}

TEST_CASE("compare_panels: a single-individual panel has the trivial gaps") {
    const TransitionModel model = build_homog3(Homog3Params{});
    VectorXd v(3);
    v << 0.5, 0.3, 0.2;
    Scenario scenario;
    scenario.model = model;
    scenario.p_start = ProbVector(v);
    scenario.population = 1;
    scenario.horizon_days = 1;
    scenario.label = "one";
    const ProjectionOutput det = project(scenario);
    const TrajectoryPanel panel = simulate_panel(model, scenario.p_start, 1, 2, 5);
    const DivergenceReport report = compare_panels(det, panel);
    for (int t = 0; t < 2; ++t)
        for (int j = 0; j < 3; ++j) {
            const double p = det.marginals(t, j);
            const double gap = report.gaps(t, j);
            CHECK((gap == doctest::Approx(-p) || gap == doctest::Approx(1.0 - p)));
        }
}

TEST_CASE("compare_panels: a mismatched model is detected") {
    // doubled propagation separates from the baseline once the feedback
    // settles, so the window runs past the 60-day figure horizon
    const auto base = baseline_scenario("sim-baseline");
    Scenario scenario = make_scenario(base, 99);
    const ProjectionOutput det = project(scenario);
    const auto doubled = baseline_scenario("sim-double-prop");
    const TrajectoryPanel panel = simulate_panel(doubled.model, doubled.p0, 1000000, 100, 99);
    const DivergenceReport report = compare_panels(det, panel);
    CHECK(report.max_abs_z > 5.0);
}

TEST_CASE("compare_panels: shape mismatch throws") {
    const ProjectionOutput det = project(baseline_60d());
    const TrajectoryPanel panel = simulate_panel(build_homog3(Homog3Params{}),
                                                 ProbVector::unit(3, 0), 10, 5, 1);
    CHECK_THROWS_AS(compare_panels(det, panel), config_error);
}
