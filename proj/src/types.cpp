#include "lmk/types.hpp"

#include <set>
#include <sstream>

#include <Eigen/SVD>

namespace lmk {

StateSpace::StateSpace(std::vector<std::string> names) : labels(std::move(names)) {
    if (labels.size() < 2)
        throw config_error("state space needs at least 2 compartments");
    std::set<std::string> seen;
    for (const auto& l : labels) {
        if (l.empty()) throw config_error("empty compartment label");
        if (!seen.insert(l).second)
            throw config_error("duplicate compartment label: " + l);
    }
}

int StateSpace::index_of(const std::string& label) const {
    for (int j = 0; j < size(); ++j)
        if (labels[j] == label) return j;
    throw config_error("unknown compartment label: " + label);
}

ProbVector::ProbVector(VectorXd v, std::optional<int> t, double sum_tol)
    : values(std::move(v)), time_index(t) {
    for (int j = 0; j < values.size(); ++j) {
        const double x = values[j];
        if (!(x >= 0.0 && x <= 1.0)) {
            std::ostringstream msg;
            msg << "probability out of [0,1] at state " << j + 1 << ": " << x;
            throw data_error(msg.str());
        }
    }
    const double s = values.sum();
    if (std::abs(s - 1.0) > sum_tol) {
        std::ostringstream msg;
        msg << "probabilities sum to " << s << ", expected 1 within " << sum_tol;
        throw data_error(msg.str());
    }
}

ProbVector ProbVector::unit(int dim, int state, std::optional<int> t) {
    VectorXd v = VectorXd::Zero(dim);
    v[state] = 1.0;
    return ProbVector(std::move(v), t);
}

ProbVector ProbVector::uniform(int dim, std::optional<int> t) {
    return ProbVector(VectorXd::Constant(dim, 1.0 / dim), t);
}

TransitionMatrix::TransitionMatrix(MatrixXd m, double row_tol) : entries(std::move(m)) {
    if (entries.rows() != entries.cols())
        throw data_error("transition matrix must be square");
    for (int i = 0; i < entries.rows(); ++i) {
        for (int j = 0; j < entries.cols(); ++j) {
            const double x = entries(i, j);
            if (!(x >= 0.0 && x <= 1.0)) {
                std::ostringstream msg;
                msg << "transition probability out of [0,1] at (" << i + 1 << "," << j + 1
                    << "): " << x;
                throw data_error(msg.str());
            }
        }
        const double s = entries.row(i).sum();
        if (std::abs(s - 1.0) > row_tol) {
            std::ostringstream msg;
            msg << "row " << i + 1 << " sums to " << s << ", expected 1 within " << row_tol;
            throw data_error(msg.str());
        }
    }
}

AggregationMatrix::AggregationMatrix(MatrixXd m) : rows(std::move(m)) {
    if (rows.rows() < 1 || rows.rows() > rows.cols())
        throw data_error("aggregation matrix needs 1 <= K <= J");
    for (int k = 0; k < rows.rows(); ++k)
        for (int j = 0; j < rows.cols(); ++j) {
            const double x = rows(k, j);
            if (x != 0.0 && x != 1.0)
                throw data_error("aggregation matrix entries must be 0 or 1");
        }
    Eigen::JacobiSVD<MatrixXd> svd(rows);
    const double tol = 1e-10 * svd.singularValues()[0];
    int rank = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()[i] > tol) ++rank;
    if (rank != rows.rows())
        throw data_error("aggregation matrix is not of full row rank");
}

bool AggregationMatrix::is_selection() const {
    for (int k = 0; k < K(); ++k)
        if (rows.row(k).sum() != 1.0) return false;
    return is_partition_like();
}

bool AggregationMatrix::is_partition_like() const {
    for (int j = 0; j < J(); ++j)
        if (rows.col(j).sum() > 1.0) return false;
    return true;
}

AggregationMatrix AggregationMatrix::selection(int J, const std::vector<int>& observed) {
    MatrixXd m = MatrixXd::Zero(static_cast<int>(observed.size()), J);
    for (int k = 0; k < static_cast<int>(observed.size()); ++k) {
        if (observed[k] < 0 || observed[k] >= J)
            throw config_error("observed state index out of range");
        m(k, observed[k]) = 1.0;
    }
    return AggregationMatrix(std::move(m));
}

TransitionMatrix TransitionModel::build_at(const ProbVector& p_prev,
                                           const VectorXd& theta_values) const {
    MatrixXd raw = builder(p_prev.values, theta_values);
    if (zero_pattern.size() > 0) {
        for (int i = 0; i < raw.rows(); ++i)
            for (int j = 0; j < raw.cols(); ++j)
                if (zero_pattern(i, j) && raw(i, j) != 0.0) {
                    std::ostringstream msg;
                    msg << family << " builder violated the zero pattern at (" << i + 1 << ","
                        << j + 1 << ")";
                    throw builder_domain_error(msg.str());
                }
    }
    return TransitionMatrix(std::move(raw), 1e-10);
}

TransitionModel TransitionModel::with_theta(VectorXd new_theta) const {
    if (new_theta.size() != theta.size())
        throw config_error("parameter vector size mismatch for family " + family);
    TransitionModel copy = *this;
    copy.theta = std::move(new_theta);
    return copy;
}

int TransitionModel::theta_index(const std::string& name) const {
    for (int i = 0; i < static_cast<int>(theta_names.size()); ++i)
        if (theta_names[i] == name) return i;
    throw config_error("unknown parameter name '" + name + "' in family " + family);
}

} // namespace lmk
