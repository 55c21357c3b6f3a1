#include "lmk/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "lmk/parallel.hpp"
#include "lmk/rng.hpp"

namespace lmk {

namespace {

constexpr double kLogFloor = 1e-300;
constexpr double kPenaltyWeight = 1e3; // hinge on negative entries, affine mode only

double safe_log(double v) { return std::log(std::max(v, kLogFloor)); }

} // namespace

void ObservationSet::validate() const {
    if (T() < 2) throw data_error("observation set needs T >= 2 days");
    if (A.J() < 2) throw data_error("aggregation matrix has fewer than 2 states");
    if (a_hat.cols() != A.K())
        throw data_error("observed aggregate count does not match aggregation rows");
    if (!dates.empty() && static_cast<int>(dates.size()) != T())
        throw data_error("date labels do not match the number of observation days");
    for (int t = 0; t < T(); ++t) {
        for (int k = 0; k < K(); ++k) {
            const double v = a_hat(t, k);
            if (!(v >= 0.0 && v <= 1.0)) {
                std::ostringstream msg;
                msg << "observed aggregate out of [0,1] at day " << t + 1 << ", series "
                    << k + 1 << ": " << v;
                throw data_error(msg.str());
            }
        }
        if (A.is_partition_like() && a_hat.row(t).sum() > 1.0 + 1e-9) {
            std::ostringstream msg;
            msg << "observed aggregates at day " << t + 1 << " sum to " << a_hat.row(t).sum()
                << " > 1";
            if (!dates.empty()) msg << " (date " << dates[t] << ")";
            throw data_error(msg.str());
        }
    }
}

LatentParametrization::LatentParametrization(const AggregationMatrix& A)
    : J_(A.J()), partition_mode_(A.is_partition_like()) {
    if (partition_mode_) {
        std::vector<int> uncovered;
        for (int j = 0; j < J_; ++j)
            if (A.rows.col(j).sum() == 0.0) uncovered.push_back(j);
        groups_.push_back(uncovered);
        for (int k = 0; k < A.K(); ++k) {
            std::vector<int> members;
            for (int j = 0; j < J_; ++j)
                if (A.rows(k, j) == 1.0) members.push_back(j);
            groups_.push_back(members);
        }
        free_dim_ = 0;
        for (const auto& g : groups_)
            free_dim_ += std::max(0, static_cast<int>(g.size()) - 1);
    } else {
        constraint_.resize(A.K() + 1, J_);
        constraint_.topRows(A.K()) = A.rows;
        constraint_.bottomRows(1).setOnes();
        particular_.compute(constraint_);
        Eigen::JacobiSVD<MatrixXd> svd(constraint_, Eigen::ComputeFullV);
        const double tol = 1e-12 * svd.singularValues()[0];
        int rank = 0;
        for (int i = 0; i < svd.singularValues().size(); ++i)
            if (svd.singularValues()[i] > tol) ++rank;
        free_dim_ = J_ - rank;
        null_basis_ = svd.matrixV().rightCols(free_dim_);
    }
}

namespace {

// Group masses for day t (1-based); entry 0 is the uncovered remainder.
VectorXd group_masses(const std::vector<std::vector<int>>& groups, const MatrixXd& a_hat,
                      int t) {
    const int G = static_cast<int>(groups.size());
    VectorXd masses(G);
    double observed = 0.0;
    for (int k = 1; k < G; ++k) {
        masses[k] = a_hat(t - 1, k - 1);
        observed += masses[k];
    }
    const double remainder = 1.0 - observed;
    if (remainder < -1e-9) {
        std::ostringstream msg;
        msg << "day " << t << ": observed aggregates sum to " << observed
            << " > 1, no feasible probability vector exists";
        throw data_error(msg.str());
    }
    if (groups[0].empty() && std::abs(remainder) > 1e-9) {
        std::ostringstream msg;
        msg << "day " << t << ": aggregates cover every state but sum to " << observed;
        throw data_error(msg.str());
    }
    masses[0] = std::max(remainder, 0.0);
    return masses;
}

} // namespace

VectorXd LatentParametrization::embed(const MatrixXd& a_hat, int t,
                                      const VectorXd& free_coords) const {
    if (free_coords.size() != free_dim_)
        throw config_error("latent coordinate size mismatch");
    if (!partition_mode_) {
        VectorXd rhs(constraint_.rows());
        rhs.head(constraint_.rows() - 1) = a_hat.row(t - 1).transpose();
        rhs[constraint_.rows() - 1] = 1.0;
        return particular_.solve(rhs) + null_basis_ * free_coords;
    }
    VectorXd p = VectorXd::Zero(J_);
    const VectorXd masses = group_masses(groups_, a_hat, t);
    int offset = 0;
    for (int g = 0; g < static_cast<int>(groups_.size()); ++g) {
        const auto& members = groups_[g];
        const int size = static_cast<int>(members.size());
        if (size == 0) continue;
        if (size == 1) {
            p[members[0]] = masses[g];
            continue;
        }
        // softmax with the first member as reference category
        double shift = 0.0;
        for (int i = 1; i < size; ++i) shift = std::max(shift, free_coords[offset + i - 1]);
        VectorXd u(size);
        u[0] = std::exp(-shift);
        double total = u[0];
        for (int i = 1; i < size; ++i) {
            u[i] = std::exp(free_coords[offset + i - 1] - shift);
            total += u[i];
        }
        for (int i = 0; i < size; ++i) p[members[i]] = masses[g] * u[i] / total;
        offset += size - 1;
    }
    return p;
}

VectorXd LatentParametrization::invert(const MatrixXd& a_hat, int t, const VectorXd& p) const {
    if (!partition_mode_) {
        VectorXd rhs(constraint_.rows());
        rhs.head(constraint_.rows() - 1) = a_hat.row(t - 1).transpose();
        rhs[constraint_.rows() - 1] = 1.0;
        return null_basis_.transpose() * (p - particular_.solve(rhs));
    }
    VectorXd coords(free_dim_);
    int offset = 0;
    for (const auto& members : groups_) {
        const int size = static_cast<int>(members.size());
        if (size <= 1) continue;
        double block_mass = 0.0;
        for (int i = 0; i < size; ++i) block_mass += p[members[i]];
        for (int i = 1; i < size; ++i) {
            coords[offset + i - 1] = block_mass <= kLogFloor
                                         ? 0.0
                                         : safe_log(p[members[i]]) - safe_log(p[members[0]]);
        }
        offset += size - 1;
    }
    return coords;
}

VectorXd LatentParametrization::project(const MatrixXd& a_hat, int t,
                                        const VectorXd& p) const {
    if (!partition_mode_) return embed(a_hat, t, invert(a_hat, t, p));
    VectorXd out = VectorXd::Zero(J_);
    const VectorXd masses = group_masses(groups_, a_hat, t);
    for (int g = 0; g < static_cast<int>(groups_.size()); ++g) {
        const auto& members = groups_[g];
        const int size = static_cast<int>(members.size());
        if (size == 0) continue;
        double block = 0.0;
        for (int i = 0; i < size; ++i) block += std::max(p[members[i]], 0.0);
        for (int i = 0; i < size; ++i) {
            out[members[i]] = block > 0.0 ? std::max(p[members[i]], 0.0) * masses[g] / block
                                          : masses[g] / size;
        }
    }
    return out;
}

ProbVector feasible_embed(const ObservationSet& observations, int t,
                          const VectorXd& free_coords) {
    observations.validate();
    if (t < 1 || t > observations.T()) throw config_error("feasible_embed day out of range");
    LatentParametrization param(observations.A);
    try {
        VectorXd p = param.embed(observations.a_hat, t, free_coords);
        for (int j = 0; j < p.size(); ++j)
            if (p[j] < 0.0 && p[j] > -1e-12) p[j] = 0.0;
        return ProbVector(std::move(p), t, 1e-9);
    } catch (const data_error& e) {
        if (!observations.dates.empty())
            throw data_error(std::string(e.what()) + " (date " + observations.dates[t - 1] +
                             ")");
        throw;
    }
}

double objective_value(const TransitionModel& model, const VectorXd& theta,
                       const std::vector<ProbVector>& p_path) {
    if (p_path.size() < 2) throw config_error("objective needs a path of length >= 2");
    double total = 0.0;
    for (std::size_t t = 1; t < p_path.size(); ++t) {
        if (p_path[t].size() != model.dim() || p_path[t - 1].size() != model.dim())
            throw config_error("path/model dimension mismatch");
        const MatrixXd P = model.builder(p_path[t - 1].values, theta);
        total += (p_path[t].values - P.transpose() * p_path[t - 1].values).squaredNorm();
    }
    return total;
}

void EstimationProblem::validate() const {
    observations.validate();
    if (observations.A.J() != model_family.dim())
        throw config_error("aggregation matrix dimension does not match the model");
    if (theta_init.size() != 0 && theta_init.size() != model_family.theta.size())
        throw config_error("theta_init size mismatch");
    for (const auto& name : fixed) model_family.theta_index(name);
    for (const auto& name : positive) model_family.theta_index(name);
    const int n_active = model_family.free_dim() - static_cast<int>(fixed.size());
    if (n_active < 1) throw config_error("no free parameters left to estimate");
    if (settings.multistart < 1) throw config_error("multistart must be >= 1");
}

namespace {

// Layout of the optimization vector: active theta coordinates (free space,
// with an extra log transform for positivity-constrained ones) followed by
// each day's latent coordinates.
struct Packing {
    const TransitionModel* family = nullptr;
    LatentParametrization param;
    VectorXd free_init; // full free-coordinate vector at theta_init
    std::vector<int> active;
    std::vector<bool> positive;
    int T = 0;

    Packing(const EstimationProblem& problem, const VectorXd& theta_init)
        : family(&problem.model_family), param(problem.observations.A),
          T(problem.observations.T()) {
        free_init = family->theta_to_free(theta_init);
        std::vector<bool> is_fixed(family->free_dim(), false);
        for (const auto& name : problem.fixed) is_fixed[family->theta_index(name)] = true;
        std::vector<bool> is_pos(family->free_dim(), false);
        for (const auto& name : problem.positive) {
            const int idx = family->theta_index(name);
            is_pos[idx] = true;
            if (!is_fixed[idx] && free_init[idx] <= 0.0)
                throw config_error("positivity-constrained coordinate '" + name +
                                   "' must start strictly positive");
        }
        for (int i = 0; i < family->free_dim(); ++i) {
            if (is_fixed[i]) continue;
            active.push_back(i);
            positive.push_back(is_pos[i]);
        }
    }

    int n_theta() const { return static_cast<int>(active.size()); }
    int per_day() const { return param.free_dim(); }
    int dim() const { return n_theta() + per_day() * T; }

    VectorXd theta_free_full(const VectorXd& x) const {
        VectorXd full = free_init;
        for (int i = 0; i < n_theta(); ++i)
            full[active[i]] = positive[i] ? std::exp(x[i]) : x[i];
        return full;
    }

    VectorXd theta_natural(const VectorXd& x) const {
        return family->free_to_theta(theta_free_full(x));
    }

    Eigen::VectorBlock<const VectorXd> latent(const VectorXd& x, int day) const { // 1-based
        return x.segment(n_theta() + (day - 1) * per_day(), per_day());
    }

    VectorXd pack(const VectorXd& theta_nat, const std::vector<VectorXd>& latent_days) const {
        VectorXd x(dim());
        const VectorXd free_full = family->theta_to_free(theta_nat);
        for (int i = 0; i < n_theta(); ++i) {
            const double v = free_full[active[i]];
            x[i] = positive[i] ? safe_log(v) : v;
        }
        for (int t = 0; t < T; ++t)
            x.segment(n_theta() + t * per_day(), per_day()) = latent_days[t];
        return x;
    }
};

// Forward-pass latent initialization: seed day 1 per the policy, then
// propagate with theta and re-project every step onto the constraint slice.
std::vector<VectorXd> initial_latent(const Packing& pk, const ObservationSet& obs,
                                     const VectorXd& theta_nat, LatentInit policy) {
    const int d = pk.per_day();
    std::vector<VectorXd> latent(pk.T, VectorXd::Zero(d));
    if (d == 0) return latent;

    VectorXd day1 = VectorXd::Zero(d);
    if (policy == LatentInit::forward_concentrated && !pk.param.groups().empty()) {
        // push the uncovered-group mass onto its first member; the level of a
        // weakly identified compartment keeps this prior, so start it low
        const int g0 = std::max(0, static_cast<int>(pk.param.groups()[0].size()) - 1);
        for (int i = 0; i < g0; ++i) day1[i] = -14.0;
    }
    latent[0] = day1;
    if (policy == LatentInit::flat) return latent;

    VectorXd p_prev = pk.param.embed(obs.a_hat, 1, latent[0]);
    for (int t = 2; t <= pk.T; ++t) {
        VectorXd p_next;
        try {
            const MatrixXd P = pk.family->builder(p_prev, theta_nat);
            p_next = P.transpose() * p_prev;
        } catch (const std::exception&) {
            p_next = p_prev;
        }
        const VectorXd on_slice = pk.param.project(obs.a_hat, t, p_next);
        VectorXd coords = pk.param.invert(obs.a_hat, t, on_slice);
        coords = coords.cwiseMax(-30.0).cwiseMin(30.0); // keep gradients alive
        latent[t - 1] = coords;
        p_prev = pk.param.embed(obs.a_hat, t, latent[t - 1]);
    }
    return latent;
}

// Residual stack: per-day recursion residuals, then (affine mode only) the
// negative-entry hinge penalties.
struct ResidualAssembler {
    const Packing* pk;
    const ObservationSet* obs;
    const std::vector<MatrixXd>* weights = nullptr; // optional (T-1) weight roots
    bool penalize = false;

    int residual_dim() const {
        const int J = pk->family->dim();
        const int base = (pk->T - 1) * J;
        return penalize ? base + pk->T * J : base;
    }

    VectorXd operator()(const VectorXd& x) const {
        const int J = pk->family->dim();
        const int T = pk->T;
        const VectorXd theta = pk->theta_natural(x);
        std::vector<VectorXd> p(T);
        for (int t = 1; t <= T; ++t) p[t - 1] = pk->param.embed(obs->a_hat, t, pk->latent(x, t));

        VectorXd r = VectorXd::Zero(residual_dim());
        for (int t = 1; t < T; ++t) {
            const MatrixXd P = pk->family->builder(p[t - 1], theta);
            VectorXd res = p[t] - P.transpose() * p[t - 1];
            if (weights) res = (*weights)[t - 1] * res;
            r.segment((t - 1) * J, J) = res;
        }
        if (penalize) {
            int at = (T - 1) * J;
            for (int t = 0; t < T; ++t)
                for (int j = 0; j < J; ++j)
                    r[at++] = kPenaltyWeight * std::min(p[t][j], 0.0);
        }
        return r;
    }
};

LeastSquaresOptions lm_options(const OptimizerSettings& settings) {
    LeastSquaresOptions opts;
    opts.max_iterations = settings.max_iterations;
    opts.gradient_tol = settings.gradient_tol;
    opts.step_tol = settings.step_tol;
    opts.objective_tol = 1e-30;
    return opts;
}

// Single warm-started solve reusing the problem's packing. Damping is scaled
// by coordinate magnitude so weakly identified directions (steep contagion
// slopes against a short window) do not drift far from the start.
LeastSquaresResult solve_single(const Packing& pk, const ObservationSet& obs,
                                const OptimizerSettings& settings, const VectorXd& x0,
                                const std::vector<MatrixXd>* weights = nullptr) {
    ResidualAssembler assembler{&pk, &obs, weights, !pk.param.interior()};
    LeastSquaresOptions opts = lm_options(settings);
    opts.damping_scale = x0.cwiseAbs().cwiseMax(1.0);
    return levenberg_marquardt([assembler](const VectorXd& x) { return assembler(x); }, x0,
                               opts);
}

std::vector<MatrixXd> gls_weight_roots(const TransitionModel& fitted,
                                       const std::vector<ProbVector>& p_hat) {
    // Inverse square roots of the within-day multinomial covariance, with
    // the null direction (constant indicator sum) dropped.
    std::vector<MatrixXd> roots;
    const int T = static_cast<int>(p_hat.size());
    for (int t = 2; t <= T; ++t) {
        const MatrixXd omega = autocovariance(fitted, p_hat, t, 0);
        Eigen::SelfAdjointEigenSolver<MatrixXd> eig(omega);
        const VectorXd& ev = eig.eigenvalues();
        const double tol = 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
        MatrixXd root = MatrixXd::Zero(omega.rows(), omega.cols());
        for (int i = 0; i < ev.size(); ++i) {
            if (ev[i] > tol)
                root += eig.eigenvectors().col(i) * eig.eigenvectors().col(i).transpose() /
                        std::sqrt(ev[i]);
        }
        roots.push_back(std::move(root));
    }
    return roots;
}

} // namespace

EstimateResult estimate(const EstimationProblem& problem) {
    problem.validate();
    const TransitionModel& family = problem.model_family;
    const ObservationSet& obs = problem.observations;
    const VectorXd theta_init =
        problem.theta_init.size() ? problem.theta_init : family.theta;
    const Packing pk(problem, theta_init);
    const OptimizerSettings& settings = problem.settings;

    std::vector<VectorXd> base_latent;
    if (!problem.p_init.empty()) {
        if (static_cast<int>(problem.p_init.size()) != pk.T)
            throw config_error("warm-start path length does not match the observations");
        for (int t = 1; t <= pk.T; ++t)
            base_latent.push_back(pk.param.invert(obs.a_hat, t, problem.p_init[t - 1].values));
    } else {
        base_latent = initial_latent(pk, obs, theta_init, problem.latent_init);
    }
    const VectorXd x_base = pk.pack(theta_init, base_latent);

    const int n_starts = settings.multistart;
    std::vector<LeastSquaresResult> runs(n_starts);
    const CounterRng rng(settings.seed);

    parallel_for_index(n_starts, [&](int s) {
        VectorXd x0 = x_base;
        if (s > 0) {
            const std::uint64_t stream = 0x5747u + static_cast<std::uint64_t>(s);
            for (int i = 0; i < pk.n_theta(); ++i) {
                const double noise = rng.normal(stream, static_cast<std::uint64_t>(i));
                x0[i] += settings.perturbation * (std::abs(x0[i]) + 0.5) * noise;
            }
            // re-derive the latent path from the perturbed parameters
            try {
                const VectorXd theta_s = pk.theta_natural(x0);
                const auto latent_s = initial_latent(pk, obs, theta_s, problem.latent_init);
                for (int t = 0; t < pk.T; ++t)
                    x0.segment(pk.n_theta() + t * pk.per_day(), pk.per_day()) = latent_s[t];
            } catch (const std::exception&) {
                // keep the base latent path
            }
            for (int i = pk.n_theta(); i < pk.dim(); ++i) {
                const double noise = rng.normal(stream + 4096, static_cast<std::uint64_t>(i));
                x0[i] += 0.5 * settings.perturbation * noise;
            }
        }
        runs[s] = solve_single(pk, obs, settings, x0);
    });

    int best = -1;
    for (int s = 0; s < n_starts; ++s) {
        if (!std::isfinite(runs[s].objective)) continue;
        if (best < 0 || runs[s].objective < runs[best].objective) best = s;
    }
    if (best < 0) {
        std::ostringstream msg;
        msg << "estimation failed: no start produced a finite objective;";
        for (int s = 0; s < n_starts; ++s) msg << " [start " << s << ": " << runs[s].stop_reason << "]";
        throw convergence_error(msg.str());
    }

    EstimateResult result;
    result.n_starts_used = n_starts;
    for (const auto& run : runs)
        result.start_objectives.push_back(run.objective);

    LeastSquaresResult chosen = runs[best];
    if (settings.use_gls) {
        // Two-step variant: reweight by the inverse covariance implied by the
        // first-step fit, then re-solve from the first-step solution.
        const VectorXd theta1 = pk.theta_natural(chosen.x);
        std::vector<ProbVector> path1;
        for (int t = 1; t <= pk.T; ++t) {
            VectorXd p = pk.param.embed(obs.a_hat, t, pk.latent(chosen.x, t));
            for (int j = 0; j < p.size(); ++j) p[j] = std::max(p[j], 0.0);
            path1.emplace_back(p / p.sum(), t, 1e-6);
        }
        const auto weights = gls_weight_roots(family.with_theta(theta1), path1);
        chosen = solve_single(pk, obs, settings, chosen.x, &weights);
        result.notes.push_back("gls: two-step inverse-covariance weighting applied");
    }

    const VectorXd& x_hat = chosen.x;
    result.theta_hat = pk.theta_natural(x_hat);
    result.converged = chosen.converged;

    const int J = family.dim();
    for (int t = 1; t <= pk.T; ++t) {
        VectorXd p = pk.param.embed(obs.a_hat, t, pk.latent(x_hat, t));
        for (int j = 0; j < J; ++j)
            if (p[j] < 0.0 && p[j] > -1e-10) p[j] = 0.0;
        result.p_hat.emplace_back(std::move(p), t, 1e-9);
    }

    result.residuals.resize(pk.T - 1, J);
    for (int t = 2; t <= pk.T; ++t) {
        const MatrixXd P = family.builder(result.p_hat[t - 2].values, result.theta_hat);
        result.residuals.row(t - 2) =
            (result.p_hat[t - 1].values - P.transpose() * result.p_hat[t - 2].values)
                .transpose();
    }
    result.objective = result.residuals.squaredNorm();

    // Count distinct solutions tied at the best objective across starts.
    const double tie_tol = std::max(1e-12, 1e-8 * (1.0 + runs[best].objective));
    int distinct = 1;
    for (int s = 0; s < n_starts; ++s) {
        if (s == best || !std::isfinite(runs[s].objective)) continue;
        if (std::abs(runs[s].objective - runs[best].objective) <= tie_tol &&
            (runs[s].x - runs[best].x).lpNorm<Eigen::Infinity>() >
                1e-5 * (1.0 + runs[best].x.lpNorm<Eigen::Infinity>()))
            ++distinct;
    }
    result.n_distinct_minima = distinct;
    if (distinct > 1)
        result.notes.push_back("multiple distinct minima tied at the best objective");

    // Constraint exactness check on the returned path.
    for (int t = 1; t <= pk.T; ++t) {
        const VectorXd gap =
            obs.A.rows * result.p_hat[t - 1].values - obs.a_hat.row(t - 1).transpose();
        if (gap.lpNorm<Eigen::Infinity>() > 1e-10)
            throw convergence_error("estimated path violates the observation constraints");
    }
    return result;
}

MatrixXd frequency_covariance(const TransitionModel& model,
                              const std::vector<ProbVector>& p_path,
                              const AggregationMatrix& A) {
    const int T = static_cast<int>(p_path.size());
    const int K = A.K();
    MatrixXd cov(T * K, T * K);
    for (int t = 1; t <= T; ++t) {
        for (int s = 1; s <= t; ++s) {
            const MatrixXd omega = autocovariance(model, p_path, t, t - s);
            const MatrixXd block = A.rows * omega * A.rows.transpose();
            cov.block((t - 1) * K, (s - 1) * K, K, K) = block;
            if (s != t) cov.block((s - 1) * K, (t - 1) * K, K, K) = block.transpose();
        }
    }
    return cov;
}

DeltaResult delta_method_covariance(const EstimationProblem& problem,
                                    const EstimateResult& result,
                                    const DeltaOptions& options) {
    if (!result.converged)
        throw convergence_error("delta method requires a converged estimate");
    problem.validate();
    if (problem.observations.population <= 0)
        throw config_error("delta method needs a positive population size");

    const TransitionModel& family = problem.model_family;
    const ObservationSet& obs = problem.observations;
    const VectorXd theta_init =
        problem.theta_init.size() ? problem.theta_init : family.theta;
    const Packing pk(problem, theta_init);

    std::vector<VectorXd> latent_hat(pk.T);
    for (int t = 1; t <= pk.T; ++t)
        latent_hat[t - 1] = pk.param.invert(obs.a_hat, t, result.p_hat[t - 1].values);
    const VectorXd x_hat = pk.pack(result.theta_hat, latent_hat);

    const int n_theta = family.theta_dim();
    const int n_latent = static_cast<int>(options.latent_entries.size());
    const int n_out = n_theta + n_latent;

    DeltaResult out;
    out.labels = family.theta_names;
    for (const auto& [day, state] : options.latent_entries) {
        std::ostringstream label;
        label << "p" << state + 1 << "(" << day << ")";
        out.labels.push_back(label.str());
    }

    OptimizerSettings warm = problem.settings;
    warm.multistart = 1;

    auto outputs_at = [&](const MatrixXd& a_hat_mod) -> VectorXd {
        ObservationSet obs_mod = obs;
        obs_mod.a_hat = a_hat_mod;
        const LeastSquaresResult run = solve_single(pk, obs_mod, warm, x_hat);
        if (!std::isfinite(run.objective))
            throw convergence_error("delta method: re-optimization failed at a perturbation");
        VectorXd o(n_out);
        o.head(n_theta) = pk.theta_natural(run.x);
        for (int i = 0; i < n_latent; ++i) {
            const auto& [day, state] = options.latent_entries[i];
            const VectorXd p = pk.param.embed(obs_mod.a_hat, day, pk.latent(run.x, day));
            o[n_theta + i] = p[state];
        }
        return o;
    };

    const VectorXd o_base = outputs_at(obs.a_hat);
    const int n_obs = obs.T() * obs.K();
    MatrixXd jac(n_out, n_obs);
    std::vector<int> flagged(n_obs, 0);

    // When the aggregation covers every state, the observed aggregates sum to
    // one, so a raw single-entry bump leaves the feasible set. Perturb along
    // the projected direction e_k - 1/K instead; the observation covariance is
    // supported on that subspace, so the sandwich is unchanged.
    const LatentParametrization& param = pk.param;
    const bool covering = param.interior() && param.groups()[0].empty();
    auto perturbed = [&](int t, int k, double step) {
        MatrixXd a = obs.a_hat;
        a(t, k) += step;
        if (covering) a.row(t).array() -= step / obs.K();
        return a;
    };

    parallel_for_index(n_obs, [&](int e) {
        const int t = e / obs.K();
        const int k = e % obs.K();
        const double h =
            std::max(options.fd_rel * std::abs(obs.a_hat(t, k)), options.fd_floor);
        const VectorXd o_up = outputs_at(perturbed(t, k, h));
        if (obs.a_hat(t, k) - h >= 0.0) {
            const VectorXd o_down = outputs_at(perturbed(t, k, -h));
            jac.col(e) = (o_up - o_down) / (2.0 * h);
            const VectorXd fwd = (o_up - o_base) / h;
            const VectorXd bwd = (o_base - o_down) / h;
            const double diff = (fwd - bwd).lpNorm<Eigen::Infinity>();
            const double scale = jac.col(e).lpNorm<Eigen::Infinity>() + 1e-8;
            if (diff > 0.1 * scale) flagged[e] = 1;
        } else {
            jac.col(e) = (o_up - o_base) / h; // boundary entry, forward only
        }
    });
    for (int e = 0; e < n_obs; ++e) out.n_asymmetric_flagged += flagged[e];

    const TransitionModel fitted = family.with_theta(result.theta_hat);
    const MatrixXd sigma = frequency_covariance(fitted, result.p_hat, obs.A) /
                           static_cast<double>(obs.population);
    MatrixXd cov = jac * sigma * jac.transpose();
    out.covariance = 0.5 * (cov + cov.transpose());
    return out;
}

BootstrapResult bootstrap_covariance(const EstimationProblem& problem,
                                     const EstimateResult& result,
                                     const BootstrapOptions& options) {
    problem.validate();
    const int B = options.replicate_seeds.empty()
                      ? options.replicates
                      : static_cast<int>(options.replicate_seeds.size());
    if (B < 2) throw config_error("bootstrap needs at least 2 replicates");

    const TransitionModel& family = problem.model_family;
    const ObservationSet& obs = problem.observations;
    const std::int64_t population =
        options.population_override.value_or(obs.population);
    if (population <= 0) throw config_error("bootstrap needs a positive population size");

    const VectorXd theta_init =
        problem.theta_init.size() ? problem.theta_init : family.theta;
    const Packing pk(problem, theta_init);
    std::vector<VectorXd> latent_hat(pk.T);
    for (int t = 1; t <= pk.T; ++t)
        latent_hat[t - 1] = pk.param.invert(obs.a_hat, t, result.p_hat[t - 1].values);
    const VectorXd x_hat = pk.pack(result.theta_hat, latent_hat);

    const TransitionModel fitted = family.with_theta(result.theta_hat);
    const ProbVector p_start = result.p_hat.front();

    OptimizerSettings warm = problem.settings;
    warm.multistart = 1;

    const CounterRng rng(options.seed);
    const int n_theta = family.theta_dim();
    MatrixXd samples(B, n_theta);
    std::vector<int> ok(B, 0);

    parallel_for_index(B, [&](int b) {
        try {
            const std::uint64_t seed_b = options.replicate_seeds.empty()
                                             ? rng.derive(static_cast<std::uint64_t>(b) + 1)
                                             : options.replicate_seeds[b];
            const TrajectoryPanel panel = simulate_panel(
                fitted, p_start, static_cast<int>(population), pk.T, seed_b);
            const auto freqs = empirical_frequencies(panel);
            ObservationSet obs_b = obs;
            for (int t = 0; t < pk.T; ++t)
                obs_b.a_hat.row(t) = (obs.A.rows * freqs[t].values).transpose();
            const LeastSquaresResult run = solve_single(pk, obs_b, warm, x_hat);
            if (!std::isfinite(run.objective)) return;
            samples.row(b) = pk.theta_natural(run.x).transpose();
            ok[b] = 1;
        } catch (const std::exception&) {
            // failed replicate, counted below
        }
    });

    BootstrapResult out;
    int kept = 0;
    for (int b = 0; b < B; ++b)
        if (ok[b]) ++kept;
    out.n_failed = B - kept;
    out.unreliable = out.n_failed > B / 5;
    if (kept < 2) {
        out.unreliable = true;
        out.covariance = MatrixXd::Zero(n_theta, n_theta);
        out.theta_samples = MatrixXd::Zero(0, n_theta);
        return out;
    }

    MatrixXd used(kept, n_theta);
    int at = 0;
    for (int b = 0; b < B; ++b)
        if (ok[b]) used.row(at++) = samples.row(b);
    const Eigen::RowVectorXd mean = used.colwise().mean();
    const MatrixXd centered = used.rowwise() - mean;
    out.covariance = centered.transpose() * centered / static_cast<double>(kept - 1);
    out.theta_samples = std::move(used);
    return out;
}

} // namespace lmk
