#pragma once

#include <functional>
#include <string>

#include <Eigen/Dense>

namespace lmk {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Residual map r(x); the optimizer minimizes ||r(x)||^2. The map may throw
/// for out-of-domain x; trial points that throw are rejected.
using ResidualFn = std::function<VectorXd(const VectorXd&)>;

struct LeastSquaresOptions {
    int max_iterations = 600;
    double gradient_tol = 1e-12; // on ||J' r||_inf
    double step_tol = 1e-13;     // relative step length
    double objective_tol = 0.0;  // early stop when ||r||^2 falls below
    bool central_differences = false;
    /// Fixed damping scale per coordinate. Empty = classic Marquardt column
    /// norms. A magnitude-based scale keeps weakly identified coordinates
    /// from drifting far along near-flat directions.
    VectorXd damping_scale;
};

struct LeastSquaresResult {
    VectorXd x;
    VectorXd residuals;
    double objective = 0.0; // ||r||^2 at x
    int iterations = 0;
    int n_evaluations = 0;
    bool converged = false;
    std::string stop_reason;
};

/// Damped Gauss-Newton (Levenberg-Marquardt) with a finite-difference
/// Jacobian and Marquardt diagonal scaling, so parameters of very different
/// magnitudes (log-intensities vs. slopes in the thousands) iterate well.
LeastSquaresResult levenberg_marquardt(const ResidualFn& residual, VectorXd x0,
                                       const LeastSquaresOptions& options = {});

} // namespace lmk
