#pragma once

#include <vector>

#include "lmk/rng.hpp"
#include "lmk/types.hpp"

namespace lmk {

/// One step of the marginal recursion p(t) = P[p(t-1); theta]' p(t-1).
/// Floating-point dust below zero is clamped and the vector renormalized;
/// deviations beyond 1e-9 are treated as an invalid transition matrix.
ProbVector bayes_step(const TransitionModel& model, const ProbVector& p_prev);

/// Deterministic path [p0, p1, ..., p_horizon] of length horizon + 1.
std::vector<ProbVector> propagate(const TransitionModel& model, const ProbVector& p0,
                                  int horizon);

/// Feedback term used while simulating a finite panel: transitions at day t
/// read the panel's own realized frequency f(t-1) (the default), or the
/// deterministic path p(t-1).
enum class Feedback { realized_frequencies, deterministic_path };

/// Simulate N independent histories over T days. Day-1 states are i.i.d.
/// draws from p0; afterwards each individual moves by the row of
/// builder(f(t-1)) for its current state. Bit-reproducible for a given seed
/// under any thread count.
TrajectoryPanel simulate_panel(const TransitionModel& model, const ProbVector& p0, int N,
                               int T, std::uint64_t seed,
                               Feedback feedback = Feedback::realized_frequencies);

/// Cross-sectional frequencies f(t), exact simplex points (counts / N).
std::vector<ProbVector> empirical_frequencies(const TrajectoryPanel& panel);

/// Autocovariance of the indicator process, Omega_{t,t-h} =
/// Pi(t-1;h) diag(p(t-h)) - p(t) p(t-h)', with Pi the ordered product of
/// transposed transition matrices built along p_path. Indices into p_path
/// are 1-based days; h = 0 gives the multinomial covariance at t.
MatrixXd autocovariance(const TransitionModel& model, const std::vector<ProbVector>& p_path,
                        int t, int h);

struct StationaryResult {
    ProbVector pi;
    bool degenerate = false; // unit eigenvalue with multiplicity > 1
    double residual_inf = 0; // ||P' pi - pi||_inf
};

/// Solve pi = P' pi on the simplex. When the unit eigenvalue is simple the
/// solution is unique; otherwise one valid pi is returned with the
/// degenerate flag set.
StationaryResult stationary_distribution(const TransitionMatrix& P);

} // namespace lmk
