#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lmk/errors.hpp"

namespace lmk {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Ordered set of compartment labels, e.g. {S, IU, ID, R, D}.
struct StateSpace {
    std::vector<std::string> labels;

    StateSpace() = default;
    explicit StateSpace(std::vector<std::string> names);

    int size() const { return static_cast<int>(labels.size()); }

    /// Index of a label; throws config_error if absent.
    int index_of(const std::string& label) const;

    bool operator==(const StateSpace& other) const { return labels == other.labels; }
};

/// Marginal distribution p(t) over compartments: entries in [0,1], unit sum.
struct ProbVector {
    VectorXd values;
    std::optional<int> time_index;

    ProbVector() = default;
    explicit ProbVector(VectorXd v, std::optional<int> t = std::nullopt,
                        double sum_tol = 1e-12);

    int size() const { return static_cast<int>(values.size()); }
    double operator[](int j) const { return values[j]; }

    static ProbVector unit(int dim, int state, std::optional<int> t = std::nullopt);
    static ProbVector uniform(int dim, std::optional<int> t = std::nullopt);
};

/// Row-stochastic one-day transition matrix.
struct TransitionMatrix {
    MatrixXd entries;

    TransitionMatrix() = default;
    explicit TransitionMatrix(MatrixXd m, double row_tol = 1e-12);

    int size() const { return static_cast<int>(entries.rows()); }
};

using ZeroPattern = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// 0/1 matrix mapping the J state frequencies to K observed aggregates.
/// Rows select single states (Example-2 style) or sum several (Example-3).
struct AggregationMatrix {
    MatrixXd rows;

    AggregationMatrix() = default;
    explicit AggregationMatrix(MatrixXd m);

    int K() const { return static_cast<int>(rows.rows()); }
    int J() const { return static_cast<int>(rows.cols()); }

    /// True when every row has exactly one nonzero and every column at most one.
    bool is_selection() const;
    /// True when every column appears in at most one row (selection rows allowed).
    bool is_partition_like() const;

    /// Select states `observed` (by index) out of J.
    static AggregationMatrix selection(int J, const std::vector<int>& observed);
};

/// Parametric map (p(t-1), theta) -> row-stochastic matrix.
///
/// `theta` holds the natural (constrained) parameters; `free_names`,
/// `theta_to_free` and `free_to_theta` give the unconstrained coordinates the
/// estimator works in. Builders must honor `zero_pattern` exactly.
struct TransitionModel {
    using Builder = std::function<MatrixXd(const VectorXd& p_prev, const VectorXd& theta)>;

    StateSpace states;
    std::string family;
    VectorXd theta;
    std::vector<std::string> theta_names;
    Builder builder;
    ZeroPattern zero_pattern;

    std::vector<std::string> free_names;
    std::function<VectorXd(const VectorXd&)> theta_to_free;
    std::function<VectorXd(const VectorXd&)> free_to_theta;

    /// Aggregation matrix naturally attached to the model, when one exists
    /// (the two-region model carries its country-level aggregation).
    std::optional<AggregationMatrix> default_aggregation;

    /// Fixed numeric attributes that are part of the model definition but not
    /// of theta (e.g. the covariate scale of the 5-state logits).
    std::map<std::string, double> attributes;

    int dim() const { return states.size(); }
    int theta_dim() const { return static_cast<int>(theta.size()); }
    int free_dim() const { return static_cast<int>(free_names.size()); }

    /// Build and validate the transition matrix at p_prev with stored theta.
    TransitionMatrix build(const ProbVector& p_prev) const { return build_at(p_prev, theta); }
    TransitionMatrix build_at(const ProbVector& p_prev, const VectorXd& theta_values) const;

    /// Copy of the model with different natural parameters.
    TransitionModel with_theta(VectorXd new_theta) const;
    int theta_index(const std::string& name) const;
};

/// Simulated panel of individual histories (N individuals x T days),
/// stored as compact state indices.
struct TrajectoryPanel {
    int n_individuals = 0;
    int n_days = 0;
    int n_states = 0;
    std::uint64_t seed = 0;
    std::vector<std::uint8_t> states; // row-major [individual][day]

    std::uint8_t state(int i, int t) const {
        return states[static_cast<std::size_t>(i) * n_days + t];
    }
    std::uint8_t& state(int i, int t) {
        return states[static_cast<std::size_t>(i) * n_days + t];
    }
};

} // namespace lmk
