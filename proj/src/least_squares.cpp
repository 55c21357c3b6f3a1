#include "lmk/least_squares.hpp"

#include <cmath>
#include <limits>
#include <optional>

namespace lmk {

namespace {

std::optional<VectorXd> try_eval(const ResidualFn& f, const VectorXd& x, int& n_eval) {
    ++n_eval;
    try {
        VectorXd r = f(x);
        if (!r.allFinite()) return std::nullopt;
        return r;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

} // namespace

LeastSquaresResult levenberg_marquardt(const ResidualFn& residual, VectorXd x0,
                                       const LeastSquaresOptions& options) {
    LeastSquaresResult out;
    const int n = static_cast<int>(x0.size());

    auto r0 = try_eval(residual, x0, out.n_evaluations);
    if (!r0) {
        out.x = std::move(x0);
        out.converged = false;
        out.stop_reason = "residual undefined at the starting point";
        out.objective = std::numeric_limits<double>::infinity();
        return out;
    }
    VectorXd x = std::move(x0);
    VectorXd r = *r0;
    const int m = static_cast<int>(r.size());

    const double fd_rel =
        options.central_differences ? 6.0e-6 : std::sqrt(std::numeric_limits<double>::epsilon());

    auto jacobian = [&](const VectorXd& at, const VectorXd& r_at) {
        MatrixXd J(m, n);
        VectorXd xp = at;
        for (int j = 0; j < n; ++j) {
            const double h = fd_rel * std::max(std::abs(at[j]), 1.0);
            xp[j] = at[j] + h;
            auto fwd = try_eval(residual, xp, out.n_evaluations);
            if (options.central_differences || !fwd) {
                xp[j] = at[j] - h;
                auto bwd = try_eval(residual, xp, out.n_evaluations);
                if (fwd && bwd)
                    J.col(j) = (*fwd - *bwd) / (2.0 * h);
                else if (fwd)
                    J.col(j) = (*fwd - r_at) / h;
                else if (bwd)
                    J.col(j) = (r_at - *bwd) / h;
                else
                    J.col(j).setZero();
            } else {
                J.col(j) = (*fwd - r_at) / h;
            }
            xp[j] = at[j];
        }
        return J;
    };

    MatrixXd J = jacobian(x, r);
    const bool fixed_scale = options.damping_scale.size() == n;
    VectorXd scale =
        fixed_scale ? options.damping_scale : VectorXd(J.colwise().norm().transpose());
    double mu = 0.0;
    double nu = 2.0;

    for (out.iterations = 0; out.iterations < options.max_iterations; ++out.iterations) {
        const double obj = r.squaredNorm();
        if (obj <= options.objective_tol) {
            out.converged = true;
            out.stop_reason = "objective below tolerance";
            break;
        }
        const VectorXd g = J.transpose() * r;
        if (g.lpNorm<Eigen::Infinity>() <= options.gradient_tol) {
            out.converged = true;
            out.stop_reason = "gradient below tolerance";
            break;
        }

        if (!fixed_scale)
            for (int j = 0; j < n; ++j)
                scale[j] = std::max({scale[j], J.col(j).norm(), 1e-8});
        if (mu == 0.0) mu = 1e-3; // relative to the scaled problem below

        // Solve the damped normal equations via QR of the stacked system
        // [J; sqrt(mu) diag(scale)] delta = -[r; 0].
        MatrixXd A = MatrixXd::Zero(m + n, n);
        A.topRows(m) = J;
        for (int j = 0; j < n; ++j) A(m + j, j) = std::sqrt(mu) * scale[j];
        VectorXd b = VectorXd::Zero(m + n);
        b.head(m) = -r;
        const VectorXd delta = A.colPivHouseholderQr().solve(b);

        const double predicted = obj - (r + J * delta).squaredNorm() +
                                 mu * (scale.asDiagonal() * delta).squaredNorm();
        const double step_norm = delta.norm();
        if (step_norm <= options.step_tol * (x.norm() + options.step_tol)) {
            out.converged = true;
            out.stop_reason = "step below tolerance";
            break;
        }

        auto r_trial = try_eval(residual, x + delta, out.n_evaluations);
        const double obj_trial =
            r_trial ? r_trial->squaredNorm() : std::numeric_limits<double>::infinity();
        const double rho = predicted > 0 ? (obj - obj_trial) / predicted : -1.0;

        if (r_trial && rho > 1e-4) {
            x += delta;
            r = std::move(*r_trial);
            J = jacobian(x, r);
            mu *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
            nu = 2.0;
        } else {
            mu = std::max(mu * nu, 1e-12);
            nu *= 2.0;
            if (nu > 1e16) {
                out.stop_reason = "damping saturated";
                break;
            }
        }
    }
    if (out.stop_reason.empty()) out.stop_reason = "iteration limit";

    out.x = std::move(x);
    out.residuals = std::move(r);
    out.objective = out.residuals.squaredNorm();
    return out;
}

} // namespace lmk
