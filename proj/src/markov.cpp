#include "lmk/markov.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "lmk/rng.hpp"

namespace lmk {

namespace {

// Clamp negative dust, renormalize, and reject real violations.
VectorXd clean_simplex(VectorXd v, int t_label) {
    for (int j = 0; j < v.size(); ++j) {
        if (v[j] < 0.0) {
            if (v[j] < -1e-9) {
                std::ostringstream msg;
                msg << "propagated probability " << v[j] << " at state " << j + 1;
                if (t_label >= 0) msg << ", day " << t_label;
                msg << " is below the -1e-9 clamping floor";
                throw data_error(msg.str());
            }
            v[j] = 0.0;
        }
    }
    const double s = v.sum();
    if (std::abs(s - 1.0) > 1e-9) {
        std::ostringstream msg;
        msg << "propagated mass " << s << " drifted beyond 1e-9";
        throw data_error(msg.str());
    }
    if (std::abs(s - 1.0) > 1e-15) v /= s;
    return v;
}

} // namespace

ProbVector bayes_step(const TransitionModel& model, const ProbVector& p_prev) {
    const TransitionMatrix P = model.build(p_prev);
    VectorXd next = P.entries.transpose() * p_prev.values;
    const int t_next = p_prev.time_index ? *p_prev.time_index + 1 : -1;
    return ProbVector(clean_simplex(std::move(next), t_next),
                      p_prev.time_index ? std::optional<int>(t_next) : std::nullopt);
}

std::vector<ProbVector> propagate(const TransitionModel& model, const ProbVector& p0,
                                  int horizon) {
    if (horizon < 1) throw config_error("propagate horizon must be >= 1");
    std::vector<ProbVector> path;
    path.reserve(horizon + 1);
    ProbVector p = p0;
    if (!p.time_index) p.time_index = 1;
    path.push_back(p);
    for (int step = 0; step < horizon; ++step) {
        try {
            p = bayes_step(model, p);
        } catch (const std::exception& e) {
            std::ostringstream msg;
            msg << "propagation failed at day " << *p.time_index + 1 << ": " << e.what();
            throw data_error(msg.str());
        }
        path.push_back(p);
    }
    return path;
}

namespace {

// Walk the CDF over positive entries only, so zero-probability states can
// never be selected even when u lands on a boundary.
template <typename Row>
int draw_from_pmf(const Row& pmf, double u) {
    double cum = 0.0;
    int last_positive = 0;
    for (int j = 0; j < pmf.size(); ++j) {
        const double pj = pmf[j];
        if (pj <= 0.0) continue;
        cum += pj;
        last_positive = j;
        if (u < cum) return j;
    }
    return last_positive; // u landed in the rounding gap past the last entry
}

} // namespace

TrajectoryPanel simulate_panel(const TransitionModel& model, const ProbVector& p0, int N,
                               int T, std::uint64_t seed, Feedback feedback) {
    if (N < 1 || T < 1) throw config_error("simulate_panel needs N >= 1 and T >= 1");
    const int J = model.dim();

    TrajectoryPanel panel;
    panel.n_individuals = N;
    panel.n_days = T;
    panel.n_states = J;
    panel.seed = seed;
    panel.states.assign(static_cast<std::size_t>(N) * T, 0);

    const CounterRng rng(seed);

    std::vector<ProbVector> det_path;
    if (feedback == Feedback::deterministic_path && T >= 2)
        det_path = propagate(model, p0, T - 1);

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const int n_threads = static_cast<int>(std::min<std::uint64_t>(hw, 8));

    // Day-1 draw from p0; counts accumulated per thread then merged so the
    // frequencies are exact integer tallies.
    std::vector<std::int64_t> counts(J, 0);
    {
        auto worker = [&](int lo, int hi, std::vector<std::int64_t>& local) {
            for (int i = lo; i < hi; ++i) {
                const double u = rng.uniform(static_cast<std::uint64_t>(i), 0);
                const int s = draw_from_pmf(p0.values, u);
                panel.state(i, 0) = static_cast<std::uint8_t>(s);
                ++local[s];
            }
        };
        std::vector<std::vector<std::int64_t>> locals(n_threads,
                                                      std::vector<std::int64_t>(J, 0));
        std::vector<std::thread> pool;
        const int chunk = (N + n_threads - 1) / n_threads;
        for (int w = 0; w < n_threads; ++w)
            pool.emplace_back(worker, w * chunk, std::min(N, (w + 1) * chunk),
                              std::ref(locals[w]));
        for (auto& th : pool) th.join();
        for (const auto& local : locals)
            for (int j = 0; j < J; ++j) counts[j] += local[j];
    }

    for (int t = 1; t < T; ++t) {
        VectorXd feed(J);
        if (feedback == Feedback::realized_frequencies) {
            for (int j = 0; j < J; ++j) feed[j] = static_cast<double>(counts[j]) / N;
        } else {
            feed = det_path[t - 1].values;
        }
        const TransitionMatrix P = model.build(ProbVector(feed, t));

        auto worker = [&](int lo, int hi, std::vector<std::int64_t>& local) {
            for (int i = lo; i < hi; ++i) {
                const double u =
                    rng.uniform(static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(t));
                const int s = draw_from_pmf(P.entries.row(panel.state(i, t - 1)), u);
                panel.state(i, t) = static_cast<std::uint8_t>(s);
                ++local[s];
            }
        };
        std::vector<std::vector<std::int64_t>> locals(n_threads,
                                                      std::vector<std::int64_t>(J, 0));
        std::vector<std::thread> pool;
        const int chunk = (N + n_threads - 1) / n_threads;
        for (int w = 0; w < n_threads; ++w)
            pool.emplace_back(worker, w * chunk, std::min(N, (w + 1) * chunk),
                              std::ref(locals[w]));
        for (auto& th : pool) th.join();
        std::fill(counts.begin(), counts.end(), 0);
        for (const auto& local : locals)
            for (int j = 0; j < J; ++j) counts[j] += local[j];
    }
    return panel;
}

std::vector<ProbVector> empirical_frequencies(const TrajectoryPanel& panel) {
    const int J = panel.n_states;
    std::vector<ProbVector> freqs;
    freqs.reserve(panel.n_days);
    for (int t = 0; t < panel.n_days; ++t) {
        std::vector<std::int64_t> counts(J, 0);
        for (int i = 0; i < panel.n_individuals; ++i) ++counts[panel.state(i, t)];
        VectorXd f(J);
        for (int j = 0; j < J; ++j)
            f[j] = static_cast<double>(counts[j]) / panel.n_individuals;
        freqs.emplace_back(std::move(f), t + 1);
    }
    return freqs;
}

MatrixXd autocovariance(const TransitionModel& model, const std::vector<ProbVector>& p_path,
                        int t, int h) {
    const int T = static_cast<int>(p_path.size());
    if (h < 0 || t - h < 1 || t > T)
        throw config_error("autocovariance needs 1 <= t-h <= t <= path length");
    const VectorXd& pt = p_path[t - 1].values;
    const VectorXd& ps = p_path[t - h - 1].values;
    const int J = static_cast<int>(pt.size());

    // Pi(t-1;h) = P'(t-1) ... P'(t-h), built along the path.
    MatrixXd Pi = MatrixXd::Identity(J, J);
    for (int s = t - 1; s >= t - h; --s)
        Pi = Pi * model.build(p_path[s - 1]).entries.transpose();

    return Pi * ps.asDiagonal() - pt * ps.transpose();
}

StationaryResult stationary_distribution(const TransitionMatrix& P) {
    const int J = P.size();
    const MatrixXd M = P.entries.transpose() - MatrixXd::Identity(J, J);

    Eigen::JacobiSVD<MatrixXd> svd(M);
    int null_dim = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()[i] < 1e-10) ++null_dim;

    // Least-squares solve of [P'-I; 1'] pi = [0; 1]. With multiple closed
    // classes the minimum-norm solution is a positive mixture of the
    // per-class stationary vectors, so it stays on the simplex.
    MatrixXd A(J + 1, J);
    A.topRows(J) = M;
    A.bottomRows(1).setOnes();
    VectorXd b = VectorXd::Zero(J + 1);
    b[J] = 1.0;
    VectorXd pi = A.bdcSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(b);

    for (int j = 0; j < J; ++j) pi[j] = std::max(pi[j], 0.0);
    pi /= pi.sum();

    StationaryResult result;
    result.residual_inf = (P.entries.transpose() * pi - pi).lpNorm<Eigen::Infinity>();
    result.degenerate = null_dim > 1;
    result.pi = ProbVector(std::move(pi));
    if (result.residual_inf > 1e-10)
        throw data_error("stationary distribution residual exceeds 1e-10");
    return result;
}

} // namespace lmk
