#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lmk/least_squares.hpp"
#include "lmk/markov.hpp"
#include "lmk/types.hpp"

namespace lmk {

/// Observed aggregate frequencies a_hat(t) = A f(t) over T days.
struct ObservationSet {
    AggregationMatrix A;
    MatrixXd a_hat;                 // T x K
    std::vector<std::string> dates; // optional day labels, size T when present
    std::int64_t population = 0;

    int T() const { return static_cast<int>(a_hat.rows()); }
    int K() const { return static_cast<int>(a_hat.cols()); }

    void validate() const;
};

/// Smooth map between free real coordinates and the per-day constraint slice
/// {p : A p = a_hat(t), sum(p) = 1, p >= 0}.
///
/// When the columns of A touch at most one row each (selection rows and
/// true-sum rows alike), each row of A pins the mass of its state group and
/// the uncovered states share the remaining mass; within a group the split
/// is a softmax of the free coordinates, so feasibility and positivity hold
/// by construction. For a general A the slice is an affine set (particular
/// solution plus null-space coordinates) and positivity is kept by a smooth
/// penalty during estimation instead.
class LatentParametrization {
public:
    explicit LatentParametrization(const AggregationMatrix& A);

    int free_dim() const { return free_dim_; }
    bool interior() const { return partition_mode_; }

    /// Free coordinates -> point on the slice (raw vector; exact constraints).
    VectorXd embed(const MatrixXd& a_hat, int t, const VectorXd& free_coords) const;
    /// Inverse of embed on the interior (least-squares coordinates when affine).
    VectorXd invert(const MatrixXd& a_hat, int t, const VectorXd& p) const;
    /// Nearest slice representative of an arbitrary simplex point
    /// (group masses rescaled; used to seed the latent path).
    VectorXd project(const MatrixXd& a_hat, int t, const VectorXd& p) const;

    const std::vector<std::vector<int>>& groups() const { return groups_; }

private:
    int J_ = 0;
    int free_dim_ = 0;
    bool partition_mode_ = true;
    // partition mode: group 0 = uncovered states, groups 1..K = rows of A
    std::vector<std::vector<int>> groups_;
    // affine mode
    MatrixXd constraint_;  // [A; 1']
    MatrixXd null_basis_;  // J x free_dim, orthonormal
    Eigen::CompleteOrthogonalDecomposition<MatrixXd> particular_;
};

/// Spec'd entry point: embed free coordinates for day t (1-based) into a
/// validated probability vector.
ProbVector feasible_embed(const ObservationSet& observations, int t,
                          const VectorXd& free_coords);

/// Sum over t = 2..T of || p(t) - P[p(t-1); theta]' p(t-1) ||^2.
double objective_value(const TransitionModel& model, const VectorXd& theta,
                       const std::vector<ProbVector>& p_path);

enum class LatentInit {
    forward_concentrated, // unobserved mass mostly on the first unobserved state,
                          // then a forward pass projected day by day (default)
    forward_uniform,      // same forward pass from a uniform unobserved split
    flat,                 // all free coordinates zero, no forward pass
};

struct OptimizerSettings {
    int multistart = 8;
    std::uint64_t seed = 20200331;
    int max_iterations = 600;
    double gradient_tol = 1e-12;
    double step_tol = 1e-13;
    double perturbation = 0.15; // multistart spread in free coordinates
    bool use_gls = false;       // two-step reweighted variant (not the default norm)
};

struct EstimationProblem {
    TransitionModel model_family; // carries builder + free-coordinate transform
    ObservationSet observations;
    VectorXd theta_init;                // natural coordinates; empty = model_family.theta
    std::vector<std::string> fixed;     // free-coordinate names held at their init values
    std::vector<std::string> positive;  // free-coordinate names constrained > 0
    LatentInit latent_init = LatentInit::forward_concentrated;
    std::vector<ProbVector> p_init;     // optional warm-start path (size T when set)
    OptimizerSettings settings;

    void validate() const;
};

struct EstimateResult {
    VectorXd theta_hat; // natural coordinates
    std::vector<ProbVector> p_hat;
    double objective = 0.0;
    bool converged = false;
    int n_starts_used = 0;
    int n_distinct_minima = 1; // distinct solutions tied at the best objective
    MatrixXd residuals;        // (T-1) x J
    std::vector<double> start_objectives;
    std::optional<MatrixXd> covariance_theta;
    std::string covariance_method; // "delta" or "bootstrap" when covariance present
    std::vector<std::string> notes;
};

/// Joint estimation of theta and the latent path by constrained least
/// squares: multistart damped Gauss-Newton over (theta free coords, latent
/// free coords), deterministic for a given seed.
EstimateResult estimate(const EstimationProblem& problem);

/// Covariance of the stacked sqrt(N) (a_hat(t) - A p(t)), t = 1..T: a TK x TK
/// matrix of blocks A Omega_{t,s} A'.
MatrixXd frequency_covariance(const TransitionModel& model,
                              const std::vector<ProbVector>& p_path,
                              const AggregationMatrix& A);

struct DeltaOptions {
    double fd_rel = 1e-5;     // relative central-difference step per observation
    double fd_floor = 1e-7;   // absolute step floor
    std::vector<std::pair<int, int>> latent_entries; // (day 1-based, state 0-based)
};

struct DeltaResult {
    MatrixXd covariance;             // over (theta_hat, selected p_hat entries)
    std::vector<std::string> labels; // row/column names
    int n_asymmetric_flagged = 0;    // columns whose one-sided slopes disagree
};

/// Delta-method covariance: numerical Jacobian of the estimator map
/// a_hat -> (theta_hat, selected latent entries) via warm-started
/// re-optimization, sandwiching frequency_covariance / N.
DeltaResult delta_method_covariance(const EstimationProblem& problem,
                                    const EstimateResult& result,
                                    const DeltaOptions& options = {});

struct BootstrapOptions {
    int replicates = 200;
    std::uint64_t seed = 7001;
    std::optional<std::int64_t> population_override; // panel size per replicate
    std::vector<std::uint64_t> replicate_seeds;      // explicit per-replicate seeds
};

struct BootstrapResult {
    MatrixXd covariance;   // over theta_hat (natural coordinates)
    MatrixXd theta_samples; // replicates x dim(theta)
    int n_failed = 0;
    bool unreliable = false; // more than 20% of replicates failed
};

/// Parametric bootstrap: simulate panels from the fitted model, re-estimate
/// each (warm-started), return the empirical covariance of theta_hat.
BootstrapResult bootstrap_covariance(const EstimationProblem& problem,
                                     const EstimateResult& result,
                                     const BootstrapOptions& options = {});

} // namespace lmk
