#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lmk/models.hpp"
#include "lmk/types.hpp"

namespace lmk {

struct ConditionCheck {
    bool pass = false;
    double value = 0.0; // the quantity the threshold was applied to
    std::string detail;
};

/// Order/rank identification diagnostics for a partially observed chain.
struct IdentificationReport {
    int J = 0, K = 0, T = 0, dim_theta = 0;
    long long moment_count = 0; // (J-1)(T-1)
    long long param_count = 0;  // (J-K-1) T + dim_theta
    bool order_satisfied = false;     // moment_count >= param_count
    bool kt_rule_satisfied = false;   // the K*T >= dim_theta counting rule
    bool counting_discrepancy = false; // the two flags disagree (they can: the
                                       // rules differ by J-1 moments)
    std::map<std::string, ConditionCheck> conditions;
    std::optional<std::array<double, 3>> abc; // identifiable reduced-form coefficients
    std::optional<int> underid_order;
    std::optional<int> overid_order;
    bool recursive_structure = false; // upper-triangular transition matrix
    std::vector<std::string> notes;
};

/// Pure counting part: moments vs. free parameters, plus the K*T rule.
IdentificationReport order_condition(int J, int K, int T, int dim_theta);

struct RecursionCoefficients {
    double a = 0, b = 0, c = 0;
};

/// Closed forms of the order-2 recursion p3(t) = a + b p3(t-1) + c p3(t-2)
/// implied by a homogeneous 3-state chain. Requires condition 1
/// (p23 != p13 beyond 1e-12).
RecursionCoefficients recursion_coefficients(const TransitionMatrix& P);

struct RecursionFit {
    double a = 0, b = 0, c = 0;
    double rms_residual = 0;
};

/// Least-squares fit of the order-2 affine recursion to an observed series.
/// Throws when the regressor matrix is rank deficient (condition-3 failure,
/// e.g. a stationary episode).
RecursionFit fit_order2_recursion(const std::vector<double>& p3_series);

/// Evaluate conditions 1-4 for a 3-state chain and the observed series;
/// failures are recorded, not thrown.
IdentificationReport check_conditions(const TransitionMatrix& P,
                                      const std::vector<double>& p3_series);

/// The nine reduced-form coefficients of the nonlinear order-2 recursion the
/// S/I/D contagion model implies for p3:
///   p3(t) = A1 + B1 p3(t-1) + C1 p3(t-2)
///         + [A2 + B2 p3(t-1) + C2 p3(t-2)] logistic(A3 + B3 p3(t-1) + C3 p3(t-2)).
/// Order: A1,B1,C1,A2,B2,C2,A3,B3,C3.
std::array<double, 9> sid_reduced_coefficients(const SidParams& theta);

struct SidReducedFormFit {
    std::array<double, 9> coefficients{};
    double rms_residual = 0;
    bool converged = false;
    int overid_order = 5;
};

/// Fit the nine-coefficient nonlinear recursion to a p3 series generated by
/// the S/I/D model, starting from the theta-implied coefficients.
SidReducedFormFit sid_reduced_form(const SidParams& theta,
                                   const std::vector<double>& p3_series);

} // namespace lmk
