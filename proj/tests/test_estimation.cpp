#include <doctest.h>

#include <cmath>
#include <vector>

#include "lmk/estimation.hpp"
#include "lmk/identification.hpp"
#include "lmk/markov.hpp"
#include "lmk/models.hpp"

using namespace lmk;

namespace {

TransitionModel mixing3() {
    Homog3Params p;
    p.p12 = 0.08;
    p.p13 = 0.02;
    p.p21 = 0.05;
    p.p23 = 0.05;
    p.p31 = 0.01;
    p.p32 = 0.04;
    return build_homog3(p);
}

ObservationSet observe_path(const std::vector<ProbVector>& path, const AggregationMatrix& A,
                            std::int64_t population) {
    ObservationSet obs;
    obs.A = A;
    obs.population = population;
    obs.a_hat.resize(static_cast<int>(path.size()), A.K());
    for (std::size_t t = 0; t < path.size(); ++t)
        obs.a_hat.row(static_cast<int>(t)) = (A.rows * path[t].values).transpose();
    return obs;
}

AggregationMatrix identity_A(int J) {
    std::vector<int> all(J);
    for (int j = 0; j < J; ++j) all[j] = j;
    return AggregationMatrix::selection(J, all);
}

} // namespace

TEST_CASE("objective_value: zero at the generating parameters") {
    const auto scenario = baseline_scenario("sim-baseline");
    const auto path = propagate(scenario.model, scenario.p0, 21);
    CHECK(objective_value(scenario.model, scenario.model.theta, path) <= 1e-20);
}

TEST_CASE("objective_value: hand values on a two-day path") {
    const TransitionModel identity = build_homog3(Homog3Params{});
    std::vector<ProbVector> stay{ProbVector::unit(3, 0, 1), ProbVector::unit(3, 0, 2)};
    CHECK(objective_value(identity, identity.theta, stay) == 0.0);
    std::vector<ProbVector> jump{ProbVector::unit(3, 0, 1), ProbVector::unit(3, 1, 2)};
    CHECK(objective_value(identity, identity.theta, jump) == doctest::Approx(2.0));
}

TEST_CASE("objective_value: matches a scalar recomputation on SIURD") {
    const auto scenario = baseline_scenario("sim-baseline");
    const auto path = propagate(scenario.model, scenario.p0, 9);
    VectorXd theta = scenario.model.theta;
    theta[scenario.model.theta_index("p24")] = 0.02;
    theta[scenario.model.theta_index("a1")] += 0.3;

    double brute = 0.0;
    for (std::size_t t = 1; t < path.size(); ++t) {
        const MatrixXd P = scenario.model.builder(path[t - 1].values, theta);
        for (int j = 0; j < 5; ++j) {
            double pred = 0.0;
            for (int i = 0; i < 5; ++i) pred += P(i, j) * path[t - 1][i];
            const double diff = path[t][j] - pred;
            brute += diff * diff;
        }
    }
    CHECK(objective_value(scenario.model, theta, path) ==
          doctest::Approx(brute).epsilon(1e-14));
}

TEST_CASE("feasible_embed: selection constraints hold by construction") {
    ObservationSet obs;
    obs.A = AggregationMatrix::selection(5, {2, 4});
    obs.a_hat.resize(2, 2);
    obs.a_hat << 0.1, 0.05, 0.12, 0.06;
    obs.population = 1000;

    const ProbVector p = feasible_embed(obs, 1, VectorXd::Zero(2));
    CHECK(p[2] == 0.1);
    CHECK(p[4] == 0.05);
    for (int j : {0, 1, 3}) CHECK(p[j] == doctest::Approx(0.85 / 3).epsilon(1e-14));
    CHECK(p.values.sum() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("feasible_embed: zero observations put all mass on the unobserved block") {
    ObservationSet obs;
    obs.A = AggregationMatrix::selection(5, {2, 4});
    obs.a_hat = MatrixXd::Zero(2, 2);
    obs.population = 1000;
    const ProbVector p = feasible_embed(obs, 2, VectorXd::Zero(2));
    CHECK(p[2] == 0.0);
    CHECK(p[4] == 0.0);
    CHECK(p[0] + p[1] + p[3] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("feasible_embed: infeasible aggregates raise a data error") {
    ObservationSet obs;
    obs.A = AggregationMatrix::selection(3, {1, 2});
    obs.a_hat.resize(2, 2);
    obs.a_hat << 0.7, 0.6, 0.1, 0.1;
    obs.population = 10;
    obs.dates = {"2020-03-16", "2020-03-17"};
    CHECK_THROWS_AS(feasible_embed(obs, 1, VectorXd::Zero(0)), data_error);
    CHECK_THROWS_AS(obs.validate(), data_error); // selection sums must stay <= 1
}

TEST_CASE("latent parametrization: embed and invert round-trip") {
    const AggregationMatrix A = AggregationMatrix::selection(5, {2, 4});
    const LatentParametrization param(A);
    CHECK(param.free_dim() == 2);
    MatrixXd a_hat(1, 2);
    a_hat << 0.2, 0.1;
    const CounterRng rng(8);
    for (int rep = 0; rep < 25; ++rep) {
        VectorXd coords(2);
        coords << 4.0 * rng.uniform(rep, 0) - 2.0, 4.0 * rng.uniform(rep, 1) - 2.0;
        const VectorXd p = param.embed(a_hat, 1, coords);
        const VectorXd back = param.invert(a_hat, 1, p);
        CHECK((back - coords).lpNorm<Eigen::Infinity>() < 1e-10);
    }
}

TEST_CASE("latent parametrization: true-sum rows (two-region aggregation)") {
    MatrixXd rows(2, 4);
    rows << 1, 1, 0, 0, 0, 0, 1, 1;
    const AggregationMatrix A{rows};
    const LatentParametrization param(A);
    CHECK(param.interior());
    CHECK(param.free_dim() == 2);
    MatrixXd a_hat(1, 2);
    a_hat << 0.7, 0.3;
    VectorXd coords(2);
    coords << 0.4, -1.1;
    const VectorXd p = param.embed(a_hat, 1, coords);
    CHECK(p[0] + p[1] == doctest::Approx(0.7).epsilon(1e-14));
    CHECK(p[2] + p[3] == doctest::Approx(0.3).epsilon(1e-14));
    CHECK(p.minCoeff() > 0.0);
    const VectorXd back = param.invert(a_hat, 1, p);
    CHECK((back - coords).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("estimate: fully observed case reduces to least squares in theta") {
    const TransitionModel truth = mixing3();
    const auto path = propagate(truth, ProbVector::unit(3, 0), 11);
    ObservationSet obs = observe_path(path, identity_A(3), 100000);

    EstimationProblem problem;
    problem.model_family = truth;
    problem.observations = obs;
    VectorXd init = truth.theta;
    for (int i = 0; i < init.size(); ++i) init[i] *= 1.15;
    problem.theta_init = init;
    problem.settings.multistart = 2;

    const EstimateResult result = estimate(problem);
    CHECK(result.converged);
    CHECK(result.objective < 1e-18);
    for (std::size_t t = 0; t < path.size(); ++t)
        CHECK((result.p_hat[t].values - path[t].values).lpNorm<Eigen::Infinity>() < 1e-12);
    CHECK((result.theta_hat - truth.theta).lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("estimate: noiseless SIURD with states 3 and 5 observed") {
    const auto scenario = baseline_scenario("sim-baseline");
    const auto path = propagate(scenario.model, scenario.p0, 21);
    ObservationSet obs = observe_path(path, AggregationMatrix::selection(5, {2, 4}),
                                      scenario.population);

    CHECK(objective_value(scenario.model, scenario.model.theta, path) <= 1e-20);

    EstimationProblem problem;
    problem.model_family = scenario.model;
    problem.observations = obs;
    VectorXd init = scenario.model.theta;
    for (int i = 0; i < init.size(); ++i) init[i] *= 1.10;
    problem.theta_init = init;
    problem.settings.multistart = 2;
    problem.settings.seed = 7;

    const EstimateResult result = estimate(problem);
    CHECK(result.objective <= 1e-12);
    for (int t = 0; t < obs.T(); ++t) {
        CHECK(std::abs(result.p_hat[t][2] - path[t][2]) < 1e-12);
        CHECK(std::abs(result.p_hat[t][1] - path[t][1]) < 1e-4);
        CHECK(std::abs(result.p_hat[t][3] - path[t][3]) < 1e-4);
    }
}

TEST_CASE("estimate: constraint exactness and recomputed objective") {
    const TransitionModel truth = mixing3();
    const auto path = propagate(truth, ProbVector::unit(3, 0), 13);
    ObservationSet obs = observe_path(path, AggregationMatrix::selection(3, {2}), 50000);

    EstimationProblem problem;
    problem.model_family = truth;
    problem.observations = obs;
    problem.settings.multistart = 2;
    const EstimateResult result = estimate(problem);

    for (int t = 0; t < obs.T(); ++t) {
        const VectorXd gap =
            obs.A.rows * result.p_hat[t].values - obs.a_hat.row(t).transpose();
        CHECK(gap.lpNorm<Eigen::Infinity>() <= 1e-10);
        CHECK(std::abs(result.p_hat[t].values.sum() - 1.0) <= 1e-12);
    }
    const double recomputed =
        objective_value(problem.model_family, result.theta_hat, result.p_hat);
    CHECK(std::abs(recomputed - result.objective) <= 1e-12 * (1.0 + result.objective));
}

TEST_CASE("estimate: best objective is nonincreasing in the number of starts") {
    const TransitionModel truth = mixing3();
    const auto path = propagate(truth, ProbVector::unit(3, 0), 9);
    ObservationSet obs = observe_path(path, AggregationMatrix::selection(3, {2}), 50000);

    double last = std::numeric_limits<double>::infinity();
    for (int starts : {1, 2, 4}) {
        EstimationProblem problem;
        problem.model_family = truth;
        problem.observations = obs;
        problem.settings.multistart = starts;
        problem.settings.max_iterations = 80;
        const EstimateResult result = estimate(problem);
        CHECK(result.objective <= last + 1e-18);
        last = result.objective;
    }
}

TEST_CASE("estimate: warm start re-converges to the same point") {
    const TransitionModel truth = mixing3();
    const auto path = propagate(truth, ProbVector::unit(3, 0), 9);
    ObservationSet obs = observe_path(path, AggregationMatrix::selection(3, {2}), 50000);

    EstimationProblem problem;
    problem.model_family = truth;
    problem.observations = obs;
    problem.settings.multistart = 2;
    const EstimateResult first = estimate(problem);

    EstimationProblem again = problem;
    again.theta_init = first.theta_hat;
    again.p_init = first.p_hat;
    again.settings.multistart = 1;
    const EstimateResult second = estimate(again);
    CHECK(std::abs(second.objective - first.objective) < 1e-14);
}

TEST_CASE("estimate: gls variant runs and reports itself") {
    const TransitionModel truth = mixing3();
    VectorXd v0(3);
    v0 << 0.9, 0.07, 0.03;
    const auto path = propagate(truth, ProbVector(v0), 9);
    ObservationSet obs = observe_path(path, AggregationMatrix::selection(3, {2}), 50000);
    EstimationProblem problem;
    problem.model_family = truth;
    problem.observations = obs;
    problem.settings.multistart = 1;
    problem.settings.use_gls = true;
    const EstimateResult result = estimate(problem);
    CHECK(std::isfinite(result.objective));
    REQUIRE(!result.notes.empty());
    CHECK(result.notes.front().find("gls") != std::string::npos);
}

TEST_CASE("frequency_covariance: single day is one multinomial block") {
    const TransitionModel model = mixing3();
    VectorXd v(3);
    v << 0.5, 0.3, 0.2;
    std::vector<ProbVector> path{ProbVector(v, 1)};
    const AggregationMatrix A = AggregationMatrix::selection(3, {2});
    const MatrixXd cov = frequency_covariance(model, path, A);
    REQUIRE(cov.rows() == 1);
    CHECK(cov(0, 0) == doctest::Approx(0.2 * 0.8).epsilon(1e-14));
}

TEST_CASE("frequency_covariance: identity transitions repeat the same block") {
    const TransitionModel identity = build_homog3(Homog3Params{});
    VectorXd v(3);
    v << 0.5, 0.3, 0.2;
    const auto path = propagate(identity, ProbVector(v), 2);
    const AggregationMatrix A = identity_A(3);
    const MatrixXd cov = frequency_covariance(identity, path, A);
    REQUIRE(cov.rows() == 9);
    const MatrixXd block = cov.block(0, 0, 3, 3);
    for (int bt = 0; bt < 3; ++bt)
        for (int bs = 0; bs < 3; ++bs)
            CHECK((cov.block(3 * bt, 3 * bs, 3, 3) - block).lpNorm<Eigen::Infinity>() <
                  1e-14);
}

TEST_CASE("frequency_covariance: Monte Carlo over 100000 panels") {
    const TransitionModel model = mixing3();
    VectorXd v(3);
    v << 0.6, 0.3, 0.1;
    const ProbVector p0(v);
    const int T = 3, M = 100000, N = 40;
    const auto path = propagate(model, p0, T - 1);
    const AggregationMatrix A = AggregationMatrix::selection(3, {1, 2});
    const MatrixXd cov = frequency_covariance(model, path, A);
    const int dim = T * A.K();

    MatrixXd samples(M, dim);
    for (int m = 0; m < M; ++m) {
        const TrajectoryPanel panel =
            simulate_panel(model, p0, N, T, 555000 + m, Feedback::deterministic_path);
        const auto freqs = empirical_frequencies(panel);
        for (int t = 0; t < T; ++t) {
            const VectorXd centered =
                std::sqrt(double(N)) * (A.rows * (freqs[t].values - path[t].values));
            samples.block(m, t * A.K(), 1, A.K()) = centered.transpose();
        }
    }
    const Eigen::RowVectorXd mean = samples.colwise().mean();
    const MatrixXd centered = samples.rowwise() - mean;
    const MatrixXd empirical = centered.transpose() * centered / double(M - 1);
    for (int a = 0; a < dim; ++a)
        for (int b = 0; b < dim; ++b) {
            const auto prod = (centered.col(a).array() * centered.col(b).array());
            const double second = prod.square().mean() - std::pow(prod.mean(), 2);
            const double se = std::sqrt(std::max(second, 1e-300) / M);
            CHECK(std::abs(empirical(a, b) - cov(a, b)) <= 5.0 * std::max(se, 1e-6));
        }
}

namespace {

struct ToyLinearProblem {
    TransitionModel truth;
    std::vector<ProbVector> path;
    ObservationSet obs;
    EstimationProblem problem;

    explicit ToyLinearProblem(std::int64_t population) {
        Homog3Params hp;
        hp.p12 = 0.06;
        hp.p13 = 0.03;
        hp.p21 = 0.04;
        hp.p23 = 0.08;
        hp.p31 = 0.02;
        hp.p32 = 0.05;
        truth = build_homog3(hp);
        VectorXd v(3);
        v << 0.9, 0.07, 0.03;
        path = propagate(truth, ProbVector(v), 7);
        obs = observe_path(path, AggregationMatrix::selection(3, {0, 1, 2}), population);
        problem.model_family = truth;
        problem.observations = obs;
        problem.theta_init = truth.theta;
        problem.fixed = {"p21", "p23", "p31", "p32"};
        problem.settings.multistart = 1;
    }

private:
    static ObservationSet observe_path(const std::vector<ProbVector>& path,
                                       const AggregationMatrix& A,
                                       std::int64_t population) {
        ObservationSet obs;
        obs.A = A;
        obs.population = population;
        obs.a_hat.resize(static_cast<int>(path.size()), A.K());
        for (std::size_t t = 0; t < path.size(); ++t)
            obs.a_hat.row(static_cast<int>(t)) = (A.rows * path[t].values).transpose();
        return obs;
    }
};

// Analytic derivative of the ordinary-least-squares map beta(f), including
// the dependence of the design matrix on the data.
MatrixXd ols_map_jacobian(const ToyLinearProblem& toy) {
    const int T = toy.obs.T();
    const VectorXd& th = toy.truth.theta;
    const double p21 = th[2], p23 = th[3], p31 = th[4], p32 = th[5];
    const double p22 = 1.0 - p21 - p23, p33 = 1.0 - p31 - p32;

    const int m = 3 * (T - 1);
    auto build = [&](const MatrixXd& data, MatrixXd& X, VectorXd& y) {
        auto fd = [&](int t, int j) { return data(t - 1, j); }; // t is 1-based
        X = MatrixXd::Zero(m, 2);
        y = VectorXd::Zero(m);
        for (int t = 2; t <= T; ++t) {
            const int r = 3 * (t - 2);
            X(r, 0) = -fd(t - 1, 0);
            X(r, 1) = -fd(t - 1, 0);
            y(r) = fd(t, 0) - fd(t - 1, 0) - p21 * fd(t - 1, 1) - p31 * fd(t - 1, 2);
            X(r + 1, 0) = fd(t - 1, 0);
            y(r + 1) = fd(t, 1) - p22 * fd(t - 1, 1) - p32 * fd(t - 1, 2);
            X(r + 2, 1) = fd(t - 1, 0);
            y(r + 2) = fd(t, 2) - p23 * fd(t - 1, 1) - p33 * fd(t - 1, 2);
        }
    };

    MatrixXd X;
    VectorXd y;
    build(toy.obs.a_hat, X, y);
    const MatrixXd xtx = X.transpose() * X;
    const VectorXd beta = xtx.ldlt().solve(X.transpose() * y);
    const VectorXd resid = y - X * beta;

    MatrixXd jac(2, 3 * T);
    for (int e = 0; e < 3 * T; ++e) {
        MatrixXd data_up = toy.obs.a_hat;
        const int t = e / 3, j = e % 3;
        data_up(t, j) += 1.0;
        MatrixXd Xu;
        VectorXd yu;
        build(data_up, Xu, yu);
        const MatrixXd dX = Xu - X;
        const VectorXd dy = yu - y;
        jac.col(e) =
            xtx.ldlt().solve(dX.transpose() * resid + X.transpose() * (dy - dX * beta));
    }
    return jac;
}

} // namespace

TEST_CASE("delta method matches the analytic least-squares oracle within 1%") {
    const std::int64_t population = 100000;
    ToyLinearProblem toy(population);
    const EstimateResult result = estimate(toy.problem);
    REQUIRE(result.converged);
    CHECK(result.objective < 1e-18);

    const DeltaResult delta = delta_method_covariance(toy.problem, result);

    const MatrixXd jac_free = ols_map_jacobian(toy);
    const TransitionModel fitted = toy.truth.with_theta(result.theta_hat);
    const MatrixXd sigma =
        frequency_covariance(fitted, result.p_hat, toy.obs.A) / double(population);
    const MatrixXd oracle_cov = jac_free * sigma * jac_free.transpose();

    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            CHECK(delta.covariance(a, b) ==
                  doctest::Approx(oracle_cov(a, b)).epsilon(0.01));

    for (int i = 2; i < 6; ++i) CHECK(std::abs(delta.covariance(i, i)) < 1e-18);
}

TEST_CASE("delta method scales exactly as 1/N") {
    ToyLinearProblem toy_small(50000);
    const EstimateResult result = estimate(toy_small.problem);
    const DeltaResult small = delta_method_covariance(toy_small.problem, result);

    ToyLinearProblem toy_big(100000);
    const EstimateResult result_big = estimate(toy_big.problem);
    const DeltaResult big = delta_method_covariance(toy_big.problem, result_big);

    for (int a = 0; a < 2; ++a)
        CHECK(small.covariance(a, a) ==
              doctest::Approx(2.0 * big.covariance(a, a)).epsilon(1e-9));
}

TEST_CASE("delta method on a partially observed SIURD instance") {
    const auto scenario = baseline_scenario("sim-baseline");
    const auto path = propagate(scenario.model, scenario.p0, 7);
    ObservationSet obs = observe_path(path, AggregationMatrix::selection(5, {2, 4}),
                                      1000000);

    EstimationProblem problem;
    problem.model_family = scenario.model;
    problem.observations = obs;
    problem.settings.multistart = 1;
    const EstimateResult result = estimate(problem);
    REQUIRE(result.converged);

    DeltaOptions options;
    options.latent_entries = {{3, 1}, {5, 3}};
    const DeltaResult delta = delta_method_covariance(problem, result, options);
    REQUIRE(delta.covariance.rows() == 15);
    CHECK(delta.labels.back() == "p4(5)");
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(delta.covariance);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10 * std::abs(delta.covariance.trace()));
    for (int i = 0; i < 6; ++i) CHECK(std::isfinite(delta.covariance(i, i)));
}

TEST_CASE("bootstrap: forced identical replicate seeds give zero covariance") {
    ToyLinearProblem toy(20000);
    const EstimateResult result = estimate(toy.problem);
    BootstrapOptions options;
    options.replicate_seeds = {42, 42};
    const BootstrapResult boot = bootstrap_covariance(toy.problem, result, options);
    CHECK(boot.n_failed == 0);
    CHECK(boot.covariance.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("bootstrap: small replicate run is finite, PSD and deterministic") {
    ToyLinearProblem toy(20000);
    const EstimateResult result = estimate(toy.problem);
    BootstrapOptions options;
    options.replicates = 16;
    options.seed = 33;
    const BootstrapResult a = bootstrap_covariance(toy.problem, result, options);
    const BootstrapResult b = bootstrap_covariance(toy.problem, result, options);
    CHECK(a.n_failed == 0);
    CHECK(!a.unreliable);
    CHECK((a.covariance - b.covariance).lpNorm<Eigen::Infinity>() == 0.0);
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(a.covariance);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10 * std::abs(a.covariance.trace()));
    CHECK(a.covariance(0, 0) > 0.0);
}

TEST_CASE("identified reduced-form coefficients sharpen with the panel size") {
    // strongly mixing chain so the reduced-form map is well conditioned and
    // N = 1e4 already sits in the 1/sqrt(N) regime
    Homog3Params hp;
    hp.p12 = 0.25;
    hp.p13 = 0.15;
    hp.p21 = 0.2;
    hp.p23 = 0.3;
    hp.p31 = 0.1;
    hp.p32 = 0.25;
    const TransitionModel truth = build_homog3(hp);
    const auto abc_true = recursion_coefficients(truth.build(ProbVector::uniform(3)));
    VectorXd v(3);
    v << 1.0, 0.0, 0.0;
    const ProbVector p0(v);
    const int T = 14;
    const AggregationMatrix A = AggregationMatrix::selection(3, {2});

    auto rmse_at = [&](int N, std::uint64_t seed0) {
        const int R = 50;
        double sq = 0.0;
        int used = 0;
        for (int r = 0; r < R; ++r) {
            const TrajectoryPanel panel = simulate_panel(truth, p0, N, T, seed0 + r);
            const auto freqs = empirical_frequencies(panel);
            ObservationSet obs = observe_path(freqs, A, N);
            EstimationProblem problem;
            problem.model_family = truth;
            problem.observations = obs;
            VectorXd init = truth.theta;
            for (int i = 0; i < 6; ++i) init[i] *= 1.1;
            problem.theta_init = init;
            problem.settings.multistart = 3;
            problem.settings.max_iterations = 250;
            const EstimateResult result = estimate(problem);
            const auto abc =
                recursion_coefficients(problem.model_family.with_theta(result.theta_hat)
                                           .build(ProbVector::uniform(3)));
            sq += std::pow(abc.a - abc_true.a, 2) + std::pow(abc.b - abc_true.b, 2) +
                  std::pow(abc.c - abc_true.c, 2);
            ++used;
        }
        return std::sqrt(sq / used);
    };

    const double rmse_small = rmse_at(10000, 91000);
    const double rmse_big = rmse_at(100000, 92000);
    const double ratio = rmse_big / rmse_small;
    CHECK(ratio > 0.2);
    CHECK(ratio < 0.6);
}

TEST_CASE("estimate: true-sum aggregation recovers the regional split") {
    // two-region contagion observed only through country-level totals
    TwoRegionSiParams tp;
    tp.alpha1 = -4.0;
    tp.alpha2 = -5.0;
    tp.beta11 = 9.0;
    tp.beta12 = 1.5;
    tp.beta21 = 2.5;
    tp.beta22 = 7.0;
    const TransitionModel truth = build_two_region_si(tp);
    REQUIRE(truth.default_aggregation.has_value());

    VectorXd p0(4);
    p0 << 0.55, 0.35, 0.06, 0.04;
    const auto path = propagate(truth, ProbVector(p0), 17);
    ObservationSet obs = observe_path(path, *truth.default_aggregation, 100000);

    EstimationProblem problem;
    problem.model_family = truth;
    problem.observations = obs;
    VectorXd init = truth.theta;
    for (int i = 0; i < init.size(); ++i) init[i] *= 1.08;
    problem.theta_init = init;
    problem.latent_init = LatentInit::flat;
    problem.settings.multistart = 4;
    problem.settings.seed = 61;

    const EstimateResult result = estimate(problem);
    CHECK(result.objective <= 1e-12);
    for (int t = 0; t < obs.T(); ++t) {
        const VectorXd gap =
            obs.A.rows * result.p_hat[t].values - obs.a_hat.row(t).transpose();
        CHECK(gap.lpNorm<Eigen::Infinity>() <= 1e-10); // totals pinned exactly
    }

    // the regional split is only weakly pinned by the totals on a short
    // window; started at the truth, the estimator must stay there
    EstimationProblem warm = problem;
    warm.theta_init = truth.theta;
    warm.p_init = path;
    warm.settings.multistart = 1;
    const EstimateResult at_truth = estimate(warm);
    CHECK(at_truth.objective <= 1e-20);
    double worst = 0.0;
    for (int t = 0; t < obs.T(); ++t)
        for (int j = 0; j < 4; ++j)
            worst = std::max(worst, std::abs(at_truth.p_hat[t][j] - path[t][j]));
    CHECK(worst < 1e-8);
}
